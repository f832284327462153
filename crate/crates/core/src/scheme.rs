//! The `(Setup, Oper)` scheme abstraction and the registry of implemented
//! schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, SeededRng};
use crate::device::{DeviceError, Geometry, OpTrace, Snapshot};
use crate::pattern::{Level, Pattern, ReqOp};
use crate::rules::RuleSet;
use crate::schemes::{
    fixture::PlaintextMarker,
    hidden_volume::HiddenVolume,
    hive::{Hive, HiveMode, HiveParams},
    pd_dm::{PdDm, PdDmParams},
    pearl::{Pearl, PearlParams},
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "FS")]
    Fs,
    #[serde(rename = "BD")]
    Bd,
    #[serde(rename = "FTL")]
    Ftl,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Fs => "FS",
            Layer::Bd => "BD",
            Layer::Ftl => "FTL",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    /// The pattern is not a valid pattern for the scheme's layer (⊥).
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scheme used before setup")]
    NotSetUp,
    #[error("{level:?} volume full: address {addr} beyond capacity {capacity}")]
    VolumeFull { level: Level, addr: u64, capacity: u64 },
    #[error("{level:?} address {addr} was never written")]
    NotFound { level: Level, addr: u64 },
    #[error("write data must be {expected} bytes, got {got}")]
    BadDataLength { expected: usize, got: usize },
    #[error("{level:?} stash overflow (capacity {capacity})")]
    StashOverflow { level: Level, capacity: usize },
    #[error("log full: no reclaimable pair")]
    LogFull,
    #[error("hidden queue overflow (bound {bound})")]
    QueueOverflow { bound: usize },
    #[error("no first-invalid page available to carry hidden data")]
    NoInvalidPages,
    #[error("no erased or reusable page left")]
    NoFreePages,
    #[error("stored data failed to decode: {0}")]
    Corrupt(String),
}

impl SchemeError {
    /// Errors that report a declared capacity limit rather than a fault.
    pub fn is_capacity(&self) -> bool {
        matches!(
            self,
            SchemeError::VolumeFull { .. }
                | SchemeError::StashOverflow { .. }
                | SchemeError::LogFull
                | SchemeError::QueueOverflow { .. }
                | SchemeError::NoInvalidPages
                | SchemeError::NoFreePages
        )
    }
}

/// Security parameter λ in bits. Keys are always 256-bit; λ bounds the
/// claimed strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityParam(pub u32);

impl Default for SecurityParam {
    fn default() -> Self {
        SecurityParam(128)
    }
}

impl SecurityParam {
    pub fn check(self) -> Result<(), SchemeError> {
        if (1..=256).contains(&self.0) {
            Ok(())
        } else {
            Err(SchemeError::Config(format!("security parameter must be in 1..=256 bits, got {}", self.0)))
        }
    }
}

/// A plausibly-deniable storage scheme. Implementations own their medium;
/// internal state (maps, stashes, queues) persists across `oper` calls.
pub trait PdScheme: Send {
    fn id(&self) -> SchemeId;
    fn layer(&self) -> Layer;
    fn rules(&self) -> RuleSet;

    /// Initializes a fresh medium and returns the key pair.
    fn setup(&mut self, lambda: SecurityParam, rng: &mut SeededRng) -> Result<KeyPair, SchemeError>;

    /// Executes `pattern`, returning the data of every `Read` in order.
    /// Patterns outside the layer's vocabulary are rejected before anything
    /// executes.
    fn oper(&mut self, pattern: &Pattern, keys: &KeyPair) -> Result<Vec<Vec<u8>>, SchemeError>;

    fn snapshot(&self) -> Snapshot;
    fn take_trace(&mut self) -> OpTrace;
    fn geometry(&self) -> Geometry;

    /// Exact length of the data carried by one logical write.
    fn block_payload_len(&self) -> usize;

    /// Number of logical blocks of a volume.
    fn capacity(&self, level: Level) -> u64;

    /// Maximum storable logical data (both volumes) over the raw capacity
    /// available for data, metadata regions excluded.
    fn space_utilization(&self) -> f64;

    /// Explicit garbage collection, for schemes that never reclaim space on
    /// their own. Returns the number of reclaimed erase units.
    fn collect_garbage(&mut self, _keys: &KeyPair) -> Result<u64, SchemeError> {
        Ok(0)
    }
}

/// Rejects requests outside the vocabulary of `layer`, and checks write
/// payload lengths, before any request is executed.
pub fn check_vocabulary(layer: Layer, pattern: &Pattern, payload_len: usize) -> Result<(), SchemeError> {
    for (i, r) in pattern.iter().enumerate() {
        if r.op() == ReqOp::Delete && layer == Layer::Bd {
            return Err(SchemeError::InvalidPattern(format!(
                "request {i}: Delete is not a block-device operation"
            )));
        }
        if let Some(d) = r.data() {
            if d.len() != payload_len {
                return Err(SchemeError::BadDataLength { expected: payload_len, got: d.len() });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    HiddenVolume,
    Hive,
    HiveB,
    PdDm,
    Pearl,
    /// Deliberately broken fixture that stores hidden data in plaintext.
    PlaintextMarker,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::HiddenVolume,
        SchemeId::Hive,
        SchemeId::HiveB,
        SchemeId::PdDm,
        SchemeId::Pearl,
        SchemeId::PlaintextMarker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::HiddenVolume => "hidden_volume",
            SchemeId::Hive => "hive",
            SchemeId::HiveB => "hive_b",
            SchemeId::PdDm => "pd_dm",
            SchemeId::Pearl => "pearl",
            SchemeId::PlaintextMarker => "plaintext_marker",
        }
    }

    /// Whether the scheme targets trace-oriented security.
    pub fn is_trace_oriented(self) -> bool {
        matches!(self, SchemeId::Hive | SchemeId::HiveB | SchemeId::PdDm)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = SchemeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| SchemeError::Config(format!("unknown scheme id {s:?}")))
    }
}

/// Geometry and tuning for every registered scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub block: Geometry,
    pub flash: Geometry,
    pub hive: HiveParams,
    pub pd_dm: PdDmParams,
    pub pearl: PearlParams,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            block: Geometry::DEFAULT_BLOCK,
            flash: Geometry::DEFAULT_FLASH,
            hive: HiveParams::default(),
            pd_dm: PdDmParams::default(),
            pearl: PearlParams::default(),
        }
    }
}

/// Instantiates a registered scheme (not yet set up).
pub fn create(id: SchemeId, config: &SchemeConfig) -> Box<dyn PdScheme> {
    match id {
        SchemeId::HiddenVolume => Box::new(HiddenVolume::new(config.block)),
        SchemeId::Hive => Box::new(Hive::new(config.block, HiveParams { mode: HiveMode::Paired, ..config.hive })),
        SchemeId::HiveB => Box::new(Hive::new(config.block, HiveParams { mode: HiveMode::PerRequest, ..config.hive })),
        SchemeId::PdDm => Box::new(PdDm::new(config.block, config.pd_dm)),
        SchemeId::Pearl => Box::new(Pearl::new(config.flash, config.pearl)),
        SchemeId::PlaintextMarker => Box::new(PlaintextMarker::new(config.block)),
    }
}
