use super::{DeviceError, Geometry, Medium, OpEntry, OpTrace, Snapshot};
use crate::crypto::SeededRng;
use rand::RngCore;

/// Fixed-size block device backed by a byte array.
#[derive(Debug, Clone)]
pub struct BlockDevice {
    num_blocks: u64,
    block_size: usize,
    cells: Vec<u8>,
    trace: OpTrace,
}

impl BlockDevice {
    /// Zero-filled device.
    pub fn new(num_blocks: u64, block_size: usize) -> Result<Self, DeviceError> {
        if num_blocks == 0 || block_size == 0 {
            return Err(DeviceError::Geometry(format!(
                "block device needs at least one block of non-zero size (got {num_blocks} x {block_size})"
            )));
        }
        Ok(BlockDevice {
            num_blocks,
            block_size,
            cells: vec![0u8; num_blocks as usize * block_size],
            trace: OpTrace::new(),
        })
    }

    /// Device with every cell filled from `rng`, as a freshly provisioned
    /// medium.
    pub fn randomized(num_blocks: u64, block_size: usize, rng: &mut SeededRng) -> Result<Self, DeviceError> {
        let mut dev = Self::new(num_blocks, block_size)?;
        rng.fill_bytes(&mut dev.cells);
        Ok(dev)
    }

    pub fn from_geometry(geometry: Geometry, rng: &mut SeededRng) -> Result<Self, DeviceError> {
        match geometry {
            Geometry::Block { num_blocks, block_size } => Self::randomized(num_blocks, block_size, rng),
            Geometry::Flash { .. } => Err(DeviceError::Geometry("flash geometry given to a block device".into())),
        }
    }

    pub fn num_blocks(&self) -> u64 {
        self.num_blocks
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    fn check(&self, addr: u64) -> Result<std::ops::Range<usize>, DeviceError> {
        if addr >= self.num_blocks {
            return Err(DeviceError::OutOfRange { addr, limit: self.num_blocks });
        }
        let start = addr as usize * self.block_size;
        Ok(start..start + self.block_size)
    }

    pub fn read_block(&mut self, addr: u64) -> Result<Vec<u8>, DeviceError> {
        let range = self.check(addr)?;
        self.trace.push(OpEntry::read(addr));
        Ok(self.cells[range].to_vec())
    }

    pub fn write_block(&mut self, addr: u64, data: &[u8]) -> Result<(), DeviceError> {
        let range = self.check(addr)?;
        if data.len() != self.block_size {
            return Err(DeviceError::BadLength { expected: self.block_size, got: data.len() });
        }
        self.cells[range].copy_from_slice(data);
        self.trace.push(OpEntry::write(addr, data.to_vec()));
        Ok(())
    }
}

impl Medium for BlockDevice {
    fn geometry(&self) -> Geometry {
        Geometry::Block { num_blocks: self.num_blocks, block_size: self.block_size }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot { geometry: self.geometry(), image: self.cells.clone(), spare: Vec::new() }
    }

    fn take_trace(&mut self) -> OpTrace {
        std::mem::take(&mut self.trace)
    }

    fn pending_trace_len(&self) -> usize {
        self.trace.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::OpKind;
    use crate::stats;
    use proptest::prelude::*;

    fn fresh() -> BlockDevice {
        BlockDevice::randomized(256, 4096, &mut SeededRng::new(42)).unwrap()
    }

    #[test]
    fn read_returns_initial_contents() {
        let mut dev = fresh();
        let snap = dev.snapshot();
        assert_eq!(dev.read_block(0).unwrap(), snap.unit(0));
        assert_eq!(dev.read_block(0).unwrap().len(), 4096);
    }

    #[test]
    fn out_of_range() {
        let mut dev = fresh();
        assert_eq!(dev.read_block(256), Err(DeviceError::OutOfRange { addr: 256, limit: 256 }));
        assert!(dev.write_block(256, &[0; 4096]).is_err());
    }

    #[test]
    fn write_read_roundtrip_and_trace() {
        let mut dev = fresh();
        let d = vec![7u8; 4096];
        dev.write_block(5, &d).unwrap();
        assert_eq!(dev.read_block(5).unwrap(), d);
        dev.write_block(0, &[0; 4096]).unwrap();
        dev.write_block(0, &[0; 4096]).unwrap();
        let t = dev.take_trace();
        assert_eq!(t.len(), 4);
        assert_eq!(t.count(OpKind::Write), 3);
        assert_eq!(t.entries()[2].location, 0);
        assert!(dev.take_trace().is_empty());
    }

    #[test]
    fn bad_length() {
        let mut dev = fresh();
        assert_eq!(
            dev.write_block(0, &[0; 10]),
            Err(DeviceError::BadLength { expected: 4096, got: 10 })
        );
        assert_eq!(dev.pending_trace_len(), 0);
    }

    #[test]
    fn zero_geometry_rejected() {
        assert!(BlockDevice::new(0, 4096).is_err());
        assert!(BlockDevice::new(4, 0).is_err());
    }

    #[test]
    fn snapshot_is_a_copy() {
        let mut dev = fresh();
        let s1 = dev.snapshot();
        let s2 = dev.snapshot();
        assert_eq!(s1, s2);
        assert_eq!(s1.digest(), s2.digest());
        assert_eq!(dev.pending_trace_len(), 0);
        dev.write_block(3, &[1; 4096]).unwrap();
        assert_ne!(dev.snapshot(), s1);
        assert_eq!(s1, s2);
        assert_eq!(dev.snapshot().changed_units(&s1), vec![3]);
    }

    #[test]
    fn fresh_device_is_random() {
        let snap = BlockDevice::randomized(256, 4096, &mut SeededRng::new(7)).unwrap().snapshot();
        assert!(stats::monobit(&snap.image) > 0.01);
        assert!(stats::RandomnessBattery::run(&snap.image).passes(0.01));
    }

    #[test]
    fn interleaved_order_preserved() {
        let mut dev = fresh();
        dev.read_block(1).unwrap();
        dev.write_block(2, &[0; 4096]).unwrap();
        dev.read_block(3).unwrap();
        let kinds: Vec<_> = dev.take_trace().iter().map(|e| (e.kind, e.location)).collect();
        assert_eq!(kinds, vec![(OpKind::Read, 1), (OpKind::Write, 2), (OpKind::Read, 3)]);
    }

    proptest! {
        #[test]
        fn trace_counts_every_operation(ops in proptest::collection::vec((any::<bool>(), 0u64..20), 0..60)) {
            let mut dev = BlockDevice::new(16, 8).unwrap();
            let mut issued = 0;
            for (write, addr) in ops {
                let r = if write { dev.write_block(addr, &[1; 8]) } else { dev.read_block(addr).map(|_| ()) };
                if r.is_ok() { issued += 1; }
            }
            prop_assert_eq!(dev.take_trace().len(), issued);
            prop_assert_eq!(dev.take_trace().len(), 0);
        }
    }
}
