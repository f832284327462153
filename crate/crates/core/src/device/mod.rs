//! Simulated physical media, their adversary-visible snapshots, and the
//! operation traces they accumulate.

mod block;
pub mod export;
mod flash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::BlockDevice;
pub use flash::{FlashDevice, Spare};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("address {addr} out of range (limit {limit})")]
    OutOfRange { addr: u64, limit: u64 },
    #[error("bad payload length: expected {expected}, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("write-once violation at page {page}, cell {cell}: programmed cell cannot be cleared without erase")]
    WriteOnceViolation { page: u64, cell: usize },
    #[error("cell value {value} at index {cell} is not 0 or 1")]
    InvalidCell { cell: usize, value: u8 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
    Erase,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
            OpKind::Erase => "erase",
        }
    }
}

/// One physical operation. Reads and erases carry no payload; writes carry
/// the full block (or the full page cell image on flash).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpEntry {
    pub kind: OpKind,
    pub location: u64,
    pub data: Option<Vec<u8>>,
}

impl OpEntry {
    pub fn read(location: u64) -> Self {
        OpEntry { kind: OpKind::Read, location, data: None }
    }

    pub fn write(location: u64, data: Vec<u8>) -> Self {
        OpEntry { kind: OpKind::Write, location, data: Some(data) }
    }

    pub fn erase(location: u64) -> Self {
        OpEntry { kind: OpKind::Erase, location, data: None }
    }

    /// Whether the operation changes the medium.
    pub fn mutates(&self) -> bool {
        matches!(self.kind, OpKind::Write | OpKind::Erase)
    }
}

/// Ordered sequence of physical operations, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpTrace {
    entries: Vec<OpEntry>,
}

impl OpTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: OpEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[OpEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, OpEntry> {
        self.entries.iter()
    }

    pub fn extend(&mut self, other: OpTrace) {
        self.entries.extend(other.entries);
    }

    /// Locations of write entries, in order.
    pub fn write_locations(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|e| e.kind == OpKind::Write)
            .map(|e| e.location)
            .collect()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }
}

impl FromIterator<OpEntry> for OpTrace {
    fn from_iter<T: IntoIterator<Item = OpEntry>>(iter: T) -> Self {
        OpTrace { entries: iter.into_iter().collect() }
    }
}

impl<'a> IntoIterator for &'a OpTrace {
    type Item = &'a OpEntry;
    type IntoIter = std::slice::Iter<'a, OpEntry>;
    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Drops read operations, keeping every medium-mutating entry in order.
///
/// Erase entries are kept alongside writes: on flash they change the medium
/// just as writes do.
pub fn wonly(trace: &OpTrace) -> OpTrace {
    trace.iter().filter(|e| e.mutates()).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Geometry {
    Block {
        num_blocks: u64,
        block_size: usize,
    },
    Flash {
        erase_blocks: u64,
        pages_per_block: u64,
        cells_per_page: usize,
    },
}

impl Geometry {
    /// 256 blocks of 4 KiB.
    pub const DEFAULT_BLOCK: Geometry = Geometry::Block { num_blocks: 256, block_size: 4096 };

    /// 64 erase blocks of 16 pages, 1536 cells (128 encoded bytes) per page.
    pub const DEFAULT_FLASH: Geometry = Geometry::Flash {
        erase_blocks: 64,
        pages_per_block: 16,
        cells_per_page: 1536,
    };

    /// Number of addressable units (blocks or pages).
    pub fn units(&self) -> u64 {
        match *self {
            Geometry::Block { num_blocks, .. } => num_blocks,
            Geometry::Flash { erase_blocks, pages_per_block, .. } => erase_blocks * pages_per_block,
        }
    }

    /// Bytes (or cells) per addressable unit.
    pub fn unit_len(&self) -> usize {
        match *self {
            Geometry::Block { block_size, .. } => block_size,
            Geometry::Flash { cells_per_page, .. } => cells_per_page,
        }
    }
}

/// Adversary-visible copy of a medium. For flash, `image` holds one byte
/// (0 or 1) per cell and `spare` one flag byte per page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub geometry: Geometry,
    pub image: Vec<u8>,
    pub spare: Vec<u8>,
}

impl Snapshot {
    /// Image of a medium that has not been provisioned yet (all zero).
    pub fn empty(geometry: Geometry) -> Self {
        let spare = match geometry {
            Geometry::Block { .. } => Vec::new(),
            Geometry::Flash { .. } => vec![0; geometry.units() as usize],
        };
        Snapshot { geometry, image: vec![0; geometry.units() as usize * geometry.unit_len()], spare }
    }

    /// Contents of block or page `unit`.
    pub fn unit(&self, unit: u64) -> &[u8] {
        let len = self.geometry.unit_len();
        let start = unit as usize * len;
        &self.image[start..start + len]
    }

    pub fn spare_of(&self, page: u64) -> Option<Spare> {
        self.spare.get(page as usize).map(|&b| Spare::from_bits_retain(b))
    }

    /// Units whose contents (or spare flags) differ from `earlier`.
    pub fn changed_units(&self, earlier: &Snapshot) -> Vec<u64> {
        assert_eq!(self.geometry, earlier.geometry, "snapshots of different media");
        (0..self.geometry.units())
            .filter(|&u| {
                self.unit(u) != earlier.unit(u) || self.spare.get(u as usize) != earlier.spare.get(u as usize)
            })
            .collect()
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.geometry).expect("geometry serializes"));
        h.update(&self.image);
        h.update(&self.spare);
        hex::encode(h.finalize())
    }
}

/// Operations common to every simulated medium.
pub trait Medium {
    fn geometry(&self) -> Geometry;
    /// Pure copy of the current state; neither the medium nor its trace change.
    fn snapshot(&self) -> Snapshot;
    /// Returns the trace accumulated since the previous call and resets it.
    fn take_trace(&mut self) -> OpTrace;
    fn pending_trace_len(&self) -> usize;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_entry() -> impl Strategy<Value = OpEntry> {
        (0u8..3, 0u64..64, proptest::collection::vec(any::<u8>(), 0..4)).prop_map(|(k, loc, d)| match k {
            0 => OpEntry::read(loc),
            1 => OpEntry::write(loc, d),
            _ => OpEntry::erase(loc),
        })
    }

    #[test]
    fn wonly_filters_reads() {
        let t: OpTrace = vec![
            OpEntry::read(1),
            OpEntry::write(1, vec![1]),
            OpEntry::write(2, vec![2]),
        ]
        .into_iter()
        .collect();
        let w = wonly(&t);
        assert_eq!(w.entries(), &[OpEntry::write(1, vec![1]), OpEntry::write(2, vec![2])]);
    }

    #[test]
    fn wonly_edge_cases() {
        let reads: OpTrace = (0..5).map(OpEntry::read).collect();
        assert!(wonly(&reads).is_empty());
        assert!(wonly(&OpTrace::new()).is_empty());
        let with_erase: OpTrace = vec![OpEntry::write(0, vec![]), OpEntry::read(0), OpEntry::erase(0)]
            .into_iter()
            .collect();
        assert_eq!(wonly(&with_erase).len(), 2);
    }

    proptest! {
        #[test]
        fn wonly_is_idempotent(entries in proptest::collection::vec(arb_entry(), 0..50)) {
            let t: OpTrace = entries.into_iter().collect();
            let once = wonly(&t);
            prop_assert_eq!(wonly(&once), once.clone());
            prop_assert!(once.iter().all(|e| e.kind != OpKind::Read));
            prop_assert_eq!(once.len(), t.len() - t.count(OpKind::Read));
        }
    }
}
