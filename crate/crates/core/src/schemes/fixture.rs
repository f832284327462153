//! A deliberately broken scheme for checking that the game harness detects
//! leaks: hidden blocks are stored in plaintext behind a fixed marker.

use std::collections::HashSet;

use crate::crypto::{encrypt, KeyPair, SeededRng, CIPHERTEXT_OVERHEAD};
use crate::device::{BlockDevice, Geometry, Medium, OpTrace, Snapshot};
use crate::pattern::{Level, Pattern, ReqOp};
use crate::rules::RuleSet;
use crate::scheme::{check_vocabulary, Layer, PdScheme, SchemeError, SchemeId, SecurityParam};

use super::{level_index, open};

pub const MARKER: &[u8; 8] = b"HIDDEN!!";

#[derive(Debug)]
pub struct PlaintextMarker {
    geometry: Geometry,
    dev: Option<BlockDevice>,
    rng: SeededRng,
    written: [HashSet<u64>; 2],
}

impl PlaintextMarker {
    pub fn new(geometry: Geometry) -> Self {
        PlaintextMarker { geometry, dev: None, rng: SeededRng::new(0), written: [HashSet::new(), HashSet::new()] }
    }

    fn half(&self) -> u64 {
        self.geometry.units() / 2
    }
}

impl PdScheme for PlaintextMarker {
    fn id(&self) -> SchemeId {
        SchemeId::PlaintextMarker
    }

    fn layer(&self) -> Layer {
        Layer::Bd
    }

    fn rules(&self) -> RuleSet {
        RuleSet::unrestricted_no_pub2()
    }

    fn setup(&mut self, lambda: SecurityParam, rng: &mut SeededRng) -> Result<KeyPair, SchemeError> {
        lambda.check()?;
        if self.half() == 0 || self.geometry.unit_len() <= CIPHERTEXT_OVERHEAD {
            return Err(SchemeError::Config("geometry too small for the marker fixture".into()));
        }
        let keys = KeyPair::generate(rng);
        self.rng = rng.fork(5);
        self.dev = Some(BlockDevice::from_geometry(self.geometry, &mut self.rng)?);
        self.written = [HashSet::new(), HashSet::new()];
        Ok(keys)
    }

    fn oper(&mut self, pattern: &Pattern, keys: &KeyPair) -> Result<Vec<Vec<u8>>, SchemeError> {
        check_vocabulary(self.layer(), pattern, self.block_payload_len())?;
        if self.dev.is_none() {
            return Err(SchemeError::NotSetUp);
        }
        let mut reads = Vec::new();
        let bs = self.geometry.unit_len();
        for r in pattern {
            let level = r.level();
            if matches!(r.op(), ReqOp::Read | ReqOp::Write) && r.addr() >= self.half() {
                return Err(SchemeError::VolumeFull { level, addr: r.addr(), capacity: self.half() });
            }
            let phys = if level == Level::Hid { self.half() + r.addr() } else { r.addr() };
            match (r.op(), level) {
                (ReqOp::Write, Level::Pub) => {
                    let ct = encrypt(keys.public(), r.data().unwrap_or_default(), &mut self.rng);
                    self.dev.as_mut().unwrap().write_block(phys, &ct)?;
                }
                (ReqOp::Write, Level::Hid) => {
                    let mut block = MARKER.to_vec();
                    block.extend_from_slice(r.data().unwrap_or_default());
                    block.resize(bs, 0);
                    self.dev.as_mut().unwrap().write_block(phys, &block)?;
                }
                (ReqOp::Read, _) => {
                    if !self.written[level_index(level)].contains(&r.addr()) {
                        return Err(SchemeError::NotFound { level, addr: r.addr() });
                    }
                    let raw = self.dev.as_mut().unwrap().read_block(phys)?;
                    reads.push(match level {
                        Level::Pub => open(keys.public(), &raw, "public block")?,
                        Level::Hid => raw[MARKER.len()..MARKER.len() + self.block_payload_len()].to_vec(),
                    });
                    continue;
                }
                _ => continue,
            }
            self.written[level_index(level)].insert(r.addr());
        }
        Ok(reads)
    }

    fn snapshot(&self) -> Snapshot {
        self.dev.as_ref().map(|d| d.snapshot()).unwrap_or_else(|| Snapshot::empty(self.geometry))
    }

    fn take_trace(&mut self) -> OpTrace {
        self.dev.as_mut().map(|d| d.take_trace()).unwrap_or_default()
    }

    fn geometry(&self) -> Geometry {
        self.geometry
    }

    fn block_payload_len(&self) -> usize {
        self.geometry.unit_len().saturating_sub(CIPHERTEXT_OVERHEAD)
    }

    fn capacity(&self, _level: Level) -> u64 {
        self.half()
    }

    fn space_utilization(&self) -> f64 {
        1.0
    }
}
