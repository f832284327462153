//! Randomized authenticated encryption with uniform-looking ciphertexts, key
//! handling, and the seeded RNG every experiment draws from.
//!
//! Ciphertext layout is `nonce (16) || AES-256-CTR body || HMAC-SHA256 tag (16)`.
//! The body has the plaintext's length, so the expansion is the constant
//! [`CIPHERTEXT_OVERHEAD`] and slot sizing never leaks content length.

use std::fmt;

use aes::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;
type HmacSha256 = Hmac<Sha256>;

pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;
/// Bytes added to every plaintext by [`encrypt`].
pub const CIPHERTEXT_OVERHEAD: usize = NONCE_LEN + TAG_LEN;
pub const KEY_LEN: usize = 32;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CryptoError {
    /// The ciphertext was not produced under this key (or was tampered with).
    #[error("authentication failed")]
    AuthFail,
}

/// A 256-bit symmetric key.
#[derive(Clone, PartialEq, Eq)]
pub struct Key([u8; KEY_LEN]);

impl Key {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Key(bytes)
    }

    pub fn generate(rng: &mut SeededRng) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        Key(k)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    /// Short public fingerprint, safe to print in transcripts.
    pub fn fingerprint(&self) -> String {
        hex::encode(&Sha256::digest(self.0)[..8])
    }

    fn subkey(&self, label: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(label);
        h.update(self.0);
        h.finalize().into()
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({})", self.fingerprint())
    }
}

/// The `(K_pub, K_hid)` pair produced by a scheme's setup.
///
/// Deliberately not serializable: only [`KeyPair::public`] may leave the
/// challenger.
#[derive(Debug, Clone)]
pub struct KeyPair {
    k_pub: Key,
    k_hid: Key,
}

impl KeyPair {
    /// Draws two fresh keys. Regenerates the hidden key on the (negligible)
    /// chance that it collides with the public one.
    pub fn generate(rng: &mut SeededRng) -> Self {
        let k_pub = Key::generate(rng);
        let mut k_hid = Key::generate(rng);
        while k_hid == k_pub {
            k_hid = Key::generate(rng);
        }
        KeyPair { k_pub, k_hid }
    }

    pub fn public(&self) -> &Key {
        &self.k_pub
    }

    pub fn hidden(&self) -> &Key {
        &self.k_hid
    }

    /// Key for the given volume level.
    pub fn for_level(&self, level: crate::pattern::Level) -> &Key {
        match level {
            crate::pattern::Level::Pub => &self.k_pub,
            crate::pattern::Level::Hid => &self.k_hid,
        }
    }
}

/// Deterministic byte source. Identical seeds give identical streams.
#[derive(Clone)]
pub struct SeededRng {
    seed: u64,
    drawn: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            drawn: 0,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of bytes drawn so far.
    pub fn counter(&self) -> u64 {
        self.drawn
    }

    pub fn bytes(&mut self, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        self.fill_bytes(&mut out);
        out
    }

    /// Derives an independent child stream. The child depends only on this
    /// generator's position and `label`.
    pub fn fork(&mut self, label: u64) -> SeededRng {
        let child = self.next_u64() ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        SeededRng::new(child)
    }

    pub fn coin(&mut self) -> bool {
        self.next_u32() & 1 == 1
    }
}

impl fmt::Debug for SeededRng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeededRng")
            .field("seed", &self.seed)
            .field("drawn", &self.drawn)
            .finish()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.drawn += 4;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.drawn += 8;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.drawn += dst.len() as u64;
        self.inner.fill_bytes(dst)
    }
}

fn apply_keystream(key: &Key, nonce: &[u8], buf: &mut [u8]) {
    let enc_key = key.subkey(b"pdsim/enc");
    let mut cipher = Aes256Ctr::new(&enc_key.into(), nonce.into());
    cipher.apply_keystream(buf);
}

fn tag(key: &Key, nonce_and_body: &[u8]) -> [u8; TAG_LEN] {
    let mac_key = key.subkey(b"pdsim/mac");
    let mut mac = HmacSha256::new_from_slice(&mac_key).expect("hmac accepts any key length");
    mac.update(nonce_and_body);
    let full = mac.finalize().into_bytes();
    let mut out = [0u8; TAG_LEN];
    out.copy_from_slice(&full[..TAG_LEN]);
    out
}

/// Encrypts `plaintext` under a fresh random nonce.
pub fn encrypt(key: &Key, plaintext: &[u8], rng: &mut SeededRng) -> Vec<u8> {
    let mut out = Vec::with_capacity(plaintext.len() + CIPHERTEXT_OVERHEAD);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(plaintext);
    apply_keystream(key, &nonce, &mut out[NONCE_LEN..]);
    let t = tag(key, &out);
    out.extend_from_slice(&t);
    out
}

/// Inverse of [`encrypt`]. Any ciphertext not produced under `key` yields
/// [`CryptoError::AuthFail`]; schemes use this to ask "is this block mine?".
pub fn decrypt(key: &Key, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < CIPHERTEXT_OVERHEAD {
        return Err(CryptoError::AuthFail);
    }
    let (authed, received) = ciphertext.split_at(ciphertext.len() - TAG_LEN);
    let mac_key = key.subkey(b"pdsim/mac");
    let mut mac = HmacSha256::new_from_slice(&mac_key).expect("hmac accepts any key length");
    mac.update(authed);
    mac.verify_truncated_left(received)
        .map_err(|_| CryptoError::AuthFail)?;
    let (nonce, body) = authed.split_at(NONCE_LEN);
    let mut plain = body.to_vec();
    apply_keystream(key, nonce, &mut plain);
    Ok(plain)
}

/// Ciphertext length for a plaintext of `plaintext_len` bytes.
pub const fn ciphertext_len(plaintext_len: usize) -> usize {
    plaintext_len + CIPHERTEXT_OVERHEAD
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}
