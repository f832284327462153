use bitflags::bitflags;

use super::{DeviceError, Geometry, Medium, OpEntry, OpTrace, Snapshot};

bitflags! {
    /// Per-page spare-area flags. Like cells they can only be set between
    /// erases.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct Spare: u8 {
        /// Page has been programmed since the last erase.
        const WRITTEN = 0b001;
        /// Page holds a second-generation WOM encoding.
        const GEN2 = 0b010;
        /// First-generation contents are superseded.
        const INVALID = 0b100;
        /// Second-generation contents are superseded.
        const INVALID2 = 0b1000;
    }
}

/// NAND-style medium: cells erase to 0 and programming may only set 0→1.
#[derive(Debug, Clone)]
pub struct FlashDevice {
    erase_blocks: u64,
    pages_per_block: u64,
    cells_per_page: usize,
    cells: Vec<u8>,
    spare: Vec<Spare>,
    erase_counts: Vec<u64>,
    trace: OpTrace,
}

impl FlashDevice {
    /// A fully erased device.
    pub fn new(erase_blocks: u64, pages_per_block: u64, cells_per_page: usize) -> Result<Self, DeviceError> {
        if erase_blocks == 0 || pages_per_block == 0 || cells_per_page == 0 {
            return Err(DeviceError::Geometry("flash geometry must be non-zero in every dimension".into()));
        }
        let pages = (erase_blocks * pages_per_block) as usize;
        Ok(FlashDevice {
            erase_blocks,
            pages_per_block,
            cells_per_page,
            cells: vec![0u8; pages * cells_per_page],
            spare: vec![Spare::empty(); pages],
            erase_counts: vec![0; erase_blocks as usize],
            trace: OpTrace::new(),
        })
    }

    pub fn from_geometry(geometry: Geometry) -> Result<Self, DeviceError> {
        match geometry {
            Geometry::Flash { erase_blocks, pages_per_block, cells_per_page } => {
                Self::new(erase_blocks, pages_per_block, cells_per_page)
            }
            Geometry::Block { .. } => Err(DeviceError::Geometry("block geometry given to a flash device".into())),
        }
    }

    pub fn num_pages(&self) -> u64 {
        self.erase_blocks * self.pages_per_block
    }

    pub fn erase_blocks(&self) -> u64 {
        self.erase_blocks
    }

    pub fn pages_per_block(&self) -> u64 {
        self.pages_per_block
    }

    pub fn cells_per_page(&self) -> usize {
        self.cells_per_page
    }

    pub fn block_of(&self, page: u64) -> u64 {
        page / self.pages_per_block
    }

    pub fn erase_count(&self, eb: u64) -> u64 {
        self.erase_counts.get(eb as usize).copied().unwrap_or(0)
    }

    fn check_page(&self, page: u64) -> Result<std::ops::Range<usize>, DeviceError> {
        if page >= self.num_pages() {
            return Err(DeviceError::OutOfRange { addr: page, limit: self.num_pages() });
        }
        let start = page as usize * self.cells_per_page;
        Ok(start..start + self.cells_per_page)
    }

    /// Spare flags of `page` without recording a trace entry.
    pub fn spare(&self, page: u64) -> Result<Spare, DeviceError> {
        self.check_page(page)?;
        Ok(self.spare[page as usize])
    }

    pub fn read_page(&mut self, page: u64) -> Result<(Vec<u8>, Spare), DeviceError> {
        let range = self.check_page(page)?;
        self.trace.push(OpEntry::read(page));
        Ok((self.cells[range].to_vec(), self.spare[page as usize]))
    }

    /// Programs `page` to the cell image `cells` and ORs `spare` into its
    /// flags. Fails without modifying anything if a programmed cell would
    /// have to return to 0.
    pub fn program_page(&mut self, page: u64, cells: &[u8], spare: Spare) -> Result<(), DeviceError> {
        let range = self.check_page(page)?;
        if cells.len() != self.cells_per_page {
            return Err(DeviceError::BadLength { expected: self.cells_per_page, got: cells.len() });
        }
        for (i, (&new, &old)) in cells.iter().zip(&self.cells[range.clone()]).enumerate() {
            if new > 1 {
                return Err(DeviceError::InvalidCell { cell: i, value: new });
            }
            if new < old {
                return Err(DeviceError::WriteOnceViolation { page, cell: i });
            }
        }
        self.cells[range].copy_from_slice(cells);
        self.spare[page as usize] |= spare | Spare::WRITTEN;
        self.trace.push(OpEntry::write(page, cells.to_vec()));
        Ok(())
    }

    /// Sets spare flags without touching cells (a spare-area program).
    pub fn mark_page(&mut self, page: u64, spare: Spare) -> Result<(), DeviceError> {
        self.check_page(page)?;
        self.spare[page as usize] |= spare;
        let range = self.check_page(page)?;
        self.trace.push(OpEntry::write(page, self.cells[range].to_vec()));
        Ok(())
    }

    pub fn erase_block(&mut self, eb: u64) -> Result<(), DeviceError> {
        if eb >= self.erase_blocks {
            return Err(DeviceError::OutOfRange { addr: eb, limit: self.erase_blocks });
        }
        let first = (eb * self.pages_per_block) as usize;
        let last = first + self.pages_per_block as usize;
        self.cells[first * self.cells_per_page..last * self.cells_per_page].fill(0);
        self.spare[first..last].fill(Spare::empty());
        self.erase_counts[eb as usize] += 1;
        self.trace.push(OpEntry::erase(eb));
        Ok(())
    }
}

impl Medium for FlashDevice {
    fn geometry(&self) -> Geometry {
        Geometry::Flash {
            erase_blocks: self.erase_blocks,
            pages_per_block: self.pages_per_block,
            cells_per_page: self.cells_per_page,
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            geometry: self.geometry(),
            image: self.cells.clone(),
            spare: self.spare.iter().map(|s| s.bits()).collect(),
        }
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
    use crate::crypto::SeededRng;
    use crate::device::OpKind;
    use rand::Rng;

    fn tiny() -> FlashDevice {
        FlashDevice::new(2, 2, 3).unwrap()
    }

    #[test]
    fn monotone_programming() {
        let mut f = tiny();
        f.program_page(0, &[1, 0, 0], Spare::empty()).unwrap();
        assert_eq!(
            f.program_page(0, &[0, 1, 1], Spare::empty()),
            Err(DeviceError::WriteOnceViolation { page: 0, cell: 0 })
        );
        f.program_page(0, &[1, 1, 0], Spare::empty()).unwrap();
        assert_eq!(f.read_page(0).unwrap().0, vec![1, 1, 0]);
    }

    #[test]
    fn erase_resets_and_counts() {
        let mut f = tiny();
        f.program_page(1, &[1, 1, 1], Spare::GEN2 | Spare::INVALID).unwrap();
        assert_eq!(f.erase_count(0), 0);
        f.erase_block(0).unwrap();
        assert_eq!(f.erase_count(0), 1);
        let (cells, spare) = f.read_page(1).unwrap();
        assert_eq!(cells, vec![0, 0, 0]);
        assert_eq!(spare, Spare::empty());
        assert_eq!(f.erase_block(2), Err(DeviceError::OutOfRange { addr: 2, limit: 2 }));
    }

    #[test]
    fn write_then_erase_trace() {
        let mut f = tiny();
        f.program_page(0, &[0, 0, 1], Spare::empty()).unwrap();
        f.erase_block(0).unwrap();
        let kinds: Vec<_> = f.take_trace().iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![OpKind::Write, OpKind::Erase]);
    }

    #[test]
    fn spare_flags_accumulate() {
        let mut f = tiny();
        f.program_page(0, &[1, 0, 0], Spare::empty()).unwrap();
        f.mark_page(0, Spare::INVALID).unwrap();
        f.program_page(0, &[1, 1, 1], Spare::GEN2).unwrap();
        assert_eq!(f.spare(0).unwrap(), Spare::WRITTEN | Spare::INVALID | Spare::GEN2);
    }

    #[test]
    fn rejects_bad_input() {
        let mut f = tiny();
        assert!(matches!(f.program_page(0, &[2, 0, 0], Spare::empty()), Err(DeviceError::InvalidCell { .. })));
        assert!(matches!(f.program_page(0, &[1, 0], Spare::empty()), Err(DeviceError::BadLength { .. })));
        assert!(matches!(f.program_page(4, &[1, 0, 0], Spare::empty()), Err(DeviceError::OutOfRange { .. })));
    }

    #[test]
    fn fuzz_cells_never_silently_clear() {
        let mut rng = SeededRng::new(5);
        let mut f = FlashDevice::new(4, 4, 12).unwrap();
        let mut model = vec![vec![0u8; 12]; 16];
        for _ in 0..10_000 {
            if rng.random_ratio(1, 50) {
                let eb = rng.random_range(0..4u64);
                f.erase_block(eb).unwrap();
                for p in eb * 4..eb * 4 + 4 {
                    model[p as usize].fill(0);
                }
                continue;
            }
            let page = rng.random_range(0..16u64);
            let req: Vec<u8> = (0..12).map(|_| rng.random_range(0..2u8)).collect();
            let legal = req.iter().zip(&model[page as usize]).all(|(n, o)| n >= o);
            match f.program_page(page, &req, Spare::empty()) {
                Ok(()) => {
                    assert!(legal);
                    model[page as usize] = req;
                }
                Err(DeviceError::WriteOnceViolation { .. }) => assert!(!legal),
                Err(e) => panic!("{e}"),
            }
            let snap = f.snapshot();
            assert_eq!(snap.unit(page), &model[page as usize][..]);
        }
    }
}
