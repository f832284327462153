//! Scheme implementations.

pub mod fixture;
pub mod hidden_volume;
pub mod hive;
pub mod pd_dm;
pub mod pearl;
pub mod wom;

use crate::crypto::{decrypt, Key};
use crate::pattern::Level;
use crate::scheme::SchemeError;

pub(crate) fn open(key: &Key, ciphertext: &[u8], what: &str) -> Result<Vec<u8>, SchemeError> {
    decrypt(key, ciphertext).map_err(|_| SchemeError::Corrupt(format!("{what} failed authentication")))
}

pub(crate) fn level_index(level: Level) -> usize {
    match level {
        Level::Pub => 0,
        Level::Hid => 1,
    }
}
