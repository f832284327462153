//! Simulator for plausibly-deniable storage.
//!
//! The crate models block and NAND-flash media with complete operation
//! traces, implements several deniable storage schemes on top of them, and
//! runs the multi-round distinguishing game between a challenger and
//! statistical adversaries. A write-only ORAM adapter turns any
//! trace-oriented scheme into an oblivious store.

pub mod bench;
pub mod catalog;
pub mod crypto;
pub mod device;
pub mod game;
pub mod pattern;
pub mod rules;
pub mod scheme;
pub mod schemes;
pub mod stats;
pub mod woram;
pub mod workload;

pub use crypto::{Key, KeyPair, SeededRng};
pub use device::{Geometry, OpTrace, Snapshot};
pub use pattern::{ChallengePair, Level, Pattern, Request};
pub use scheme::{create, PdScheme, SchemeConfig, SchemeError, SchemeId, SecurityParam};
pub use game::{estimate_advantage, AdversaryKind, GameConfig, GameOutcome, Orientation};
pub use woram::{check_def2, hidden_gen, oram_setup, DataRequest, WoramAdapter};
pub use workload::{OpMix, Workload};
