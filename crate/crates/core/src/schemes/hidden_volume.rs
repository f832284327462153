//! Static hidden volume: the device is split in two fixed regions, the
//! public volume first and the hidden volume after it. Every block is
//! randomized at setup, so hidden ciphertext is indistinguishable from the
//! unused tail of the public volume in a single snapshot.

use std::collections::HashSet;

use crate::crypto::{encrypt, KeyPair, SeededRng, CIPHERTEXT_OVERHEAD};
use crate::device::{BlockDevice, Geometry, Medium, OpTrace, Snapshot};
use crate::pattern::{Level, Pattern, ReqOp};
use crate::rules::RuleSet;
use crate::scheme::{check_vocabulary, Layer, PdScheme, SchemeError, SchemeId, SecurityParam};

use super::{level_index, open};

#[derive(Debug)]
pub struct HiddenVolume {
    geometry: Geometry,
    dev: Option<BlockDevice>,
    rng: SeededRng,
    pub_blocks: u64,
    hid_blocks: u64,
    written: [HashSet<u64>; 2],
}

impl HiddenVolume {
    pub fn new(geometry: Geometry) -> Self {
        let (pub_blocks, hid_blocks) = match geometry {
            Geometry::Block { num_blocks, .. } => (num_blocks / 2, num_blocks - num_blocks / 2),
            Geometry::Flash { .. } => (0, 0),
        };
        HiddenVolume {
            geometry,
            dev: None,
            rng: SeededRng::new(0),
            pub_blocks,
            hid_blocks,
            written: [HashSet::new(), HashSet::new()],
        }
    }

    fn base(&self, level: Level) -> u64 {
        match level {
            Level::Pub => 0,
            Level::Hid => self.pub_blocks,
        }
    }

    fn block_size(&self) -> usize {
        self.geometry.unit_len()
    }
}

impl PdScheme for HiddenVolume {
    fn id(&self) -> SchemeId {
        SchemeId::HiddenVolume
    }

    fn layer(&self) -> Layer {
        Layer::Bd
    }

    fn rules(&self) -> RuleSet {
        RuleSet::unrestricted_no_pub2()
    }

    fn setup(&mut self, lambda: SecurityParam, rng: &mut SeededRng) -> Result<KeyPair, SchemeError> {
        lambda.check()?;
        if !matches!(self.geometry, Geometry::Block { .. }) {
            return Err(SchemeError::Config("hidden volume needs a block geometry".into()));
        }
        if self.pub_blocks == 0 {
            return Err(SchemeError::Config("hidden volume needs at least two blocks".into()));
        }
        if self.block_size() <= CIPHERTEXT_OVERHEAD {
            return Err(SchemeError::Config(format!(
                "block size {} cannot hold the {CIPHERTEXT_OVERHEAD}-byte ciphertext overhead",
                self.block_size()
            )));
        }
        let keys = KeyPair::generate(rng);
        self.rng = rng.fork(1);
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
        for r in pattern {
            let level = r.level();
            let cap = self.capacity(level);
            if matches!(r.op(), ReqOp::Read | ReqOp::Write) && r.addr() >= cap {
                return Err(SchemeError::VolumeFull { level, addr: r.addr(), capacity: cap });
            }
            let phys = self.base(level) + r.addr();
            match r.op() {
                ReqOp::Write => {
                    let ct = encrypt(keys.for_level(level), r.data().unwrap_or_default(), &mut self.rng);
                    self.dev.as_mut().expect("set up").write_block(phys, &ct)?;
                    self.written[level_index(level)].insert(r.addr());
                }
                ReqOp::Read => {
                    if !self.written[level_index(level)].contains(&r.addr()) {
                        return Err(SchemeError::NotFound { level, addr: r.addr() });
                    }
                    let ct = self.dev.as_mut().expect("set up").read_block(phys)?;
                    reads.push(open(keys.for_level(level), &ct, "volume block")?);
                }
                ReqOp::Delete | ReqOp::Unmount | ReqOp::Dummy => {}
            }
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
        self.block_size().saturating_sub(CIPHERTEXT_OVERHEAD)
    }

    fn capacity(&self, level: Level) -> u64 {
        match level {
            Level::Pub => self.pub_blocks,
            Level::Hid => self.hid_blocks,
        }
    }

    fn space_utilization(&self) -> f64 {
        let total = self.pub_blocks + self.hid_blocks;
        if total == 0 {
            return 0.0;
        }
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::wonly;
    use crate::pattern::Request;

    fn small() -> (HiddenVolume, KeyPair) {
        let mut s = HiddenVolume::new(Geometry::Block { num_blocks: 16, block_size: 64 });
        let keys = s.setup(SecurityParam::default(), &mut SeededRng::new(3)).unwrap();
        s.take_trace();
        (s, keys)
    }

    fn one(r: Request) -> Pattern {
        [r].into_iter().collect()
    }

    #[test]
    fn hidden_write_lands_in_hidden_region() {
        let (mut s, keys) = small();
        let before = s.snapshot();
        s.oper(&one(Request::write(Level::Hid, 0, vec![0xAB; 32])), &keys).unwrap();
        assert_eq!(s.snapshot().changed_units(&before), vec![8]);
        let ct = s.snapshot().unit(8).to_vec();
        assert!(crate::crypto::decrypt(keys.public(), &ct).is_err());
        assert_eq!(crate::crypto::decrypt(keys.hidden(), &ct).unwrap(), vec![0xAB; 32]);
        assert_eq!(wonly(&s.take_trace()).len(), 1);
    }

    #[test]
    fn read_back_both_levels() {
        let (mut s, keys) = small();
        let p: Pattern = [
            Request::write(Level::Pub, 3, vec![1; 32]),
            Request::write(Level::Hid, 3, vec![2; 32]),
            Request::read(Level::Pub, 3),
            Request::read(Level::Hid, 3),
        ]
        .into_iter()
        .collect();
        assert_eq!(s.oper(&p, &keys).unwrap(), vec![vec![1; 32], vec![2; 32]]);
    }

    #[test]
    fn boundary_and_errors() {
        let (mut s, keys) = small();
        assert!(matches!(
            s.oper(&one(Request::write(Level::Pub, 8, vec![0; 32])), &keys),
            Err(SchemeError::VolumeFull { level: Level::Pub, .. })
        ));
        assert!(matches!(
            s.oper(&one(Request::read(Level::Hid, 1)), &keys),
            Err(SchemeError::NotFound { .. })
        ));
        assert!(matches!(
            s.oper(&one(Request::delete(Level::Pub, 1)), &keys),
            Err(SchemeError::InvalidPattern(_))
        ));
        assert!(s.take_trace().is_empty());
    }

    #[test]
    fn zero_block_geometry_is_config_error() {
        let mut s = HiddenVolume::new(Geometry::Block { num_blocks: 0, block_size: 64 });
        assert!(matches!(
            s.setup(SecurityParam::default(), &mut SeededRng::new(0)),
            Err(SchemeError::Config(_))
        ));
    }

    #[test]
    fn utilization_counts_both_regions() {
        let (s, _) = small();
        assert_eq!(s.capacity(Level::Pub) + s.capacity(Level::Hid), 16);
        assert_eq!(s.space_utilization(), 1.0);
    }
}
