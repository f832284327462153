//! Write-only ORAM based hidden volumes.
//!
//! Both volumes live in one shared data region. Every step samples `beta`
//! distinct data blocks uniformly at random and rewrites all of them: free
//! blocks receive a queued stash item (hidden first) or fresh noise, occupied
//! blocks are re-encrypted in place. The position maps of both volumes sit
//! in a fixed metadata region at the front of the device and are rewritten,
//! encrypted, after every call that ran at least one step.
//!
//! In [`HiveMode::Paired`] only public writes run steps and hidden writes
//! wait in the stash for the next one. In [`HiveMode::PerRequest`] every
//! request except `Unmount` runs exactly one step.

use std::collections::VecDeque;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::crypto::{encrypt, KeyPair, SeededRng, CIPHERTEXT_OVERHEAD};
use crate::device::{BlockDevice, Geometry, Medium, OpTrace, Snapshot};
use crate::pattern::{Level, Pattern, ReqOp};
use crate::rules::RuleSet;
use crate::scheme::{check_vocabulary, Layer, PdScheme, SchemeError, SchemeId, SecurityParam};

use super::{level_index, open};

const ADDR_LEN: usize = 8;
const MAP_ENTRY_LEN: usize = 4;
const UNMAPPED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiveMode {
    #[default]
    Paired,
    PerRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HiveParams {
    /// Blocks touched per step.
    pub beta: usize,
    /// Stash capacity per volume, in logical blocks.
    pub stash_capacity: usize,
    pub mode: HiveMode,
    /// Logical blocks per volume; defaults to a quarter of the data region.
    pub volume_blocks: Option<u64>,
}

impl Default for HiveParams {
    fn default() -> Self {
        HiveParams { beta: 3, stash_capacity: 64, mode: HiveMode::Paired, volume_blocks: None }
    }
}

/// What one step does to one sampled data block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Free block receives the next stash item of `level`.
    Place { block: u64, level: Level },
    /// Occupied block is re-encrypted in place.
    Reencrypt { block: u64 },
    /// Free block with nothing to place receives random bytes.
    Noise { block: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    map_blocks: u64,
    data_blocks: u64,
    volume_blocks: u64,
}

fn layout(geometry: Geometry, params: &HiveParams) -> Result<Layout, SchemeError> {
    let (num_blocks, block_size) = match geometry {
        Geometry::Block { num_blocks, block_size } => (num_blocks, block_size),
        Geometry::Flash { .. } => return Err(SchemeError::Config("hive needs a block geometry".into())),
    };
    if block_size <= CIPHERTEXT_OVERHEAD + ADDR_LEN + MAP_ENTRY_LEN {
        return Err(SchemeError::Config(format!("block size {block_size} too small for hive")));
    }
    if params.beta == 0 || params.stash_capacity == 0 {
        return Err(SchemeError::Config("beta and stash capacity must be positive".into()));
    }
    let per_block = ((block_size - CIPHERTEXT_OVERHEAD) / MAP_ENTRY_LEN) as u64;
    let fits = |mb: u64, vol: u64| vol <= mb * per_block;
    let mut mb = 1;
    loop {
        if num_blocks < 2 * mb + 4 {
            return Err(SchemeError::Config(format!("{num_blocks} blocks leave no room for a hive data region")));
        }
        let data = num_blocks - 2 * mb;
        let vol = params.volume_blocks.unwrap_or(data / 4);
        if fits(mb, vol) {
            // Prefer a data region divisible by four so the default volumes
            // fill exactly half of it.
            if params.volume_blocks.is_none() && data % 4 == 2 && num_blocks >= 2 * mb + 6 {
                let data2 = data - 2;
                if fits(mb + 1, data2 / 4) {
                    mb += 1;
                }
            }
            break;
        }
        mb += 1;
    }
    let data_blocks = num_blocks - 2 * mb;
    let volume_blocks = params.volume_blocks.unwrap_or(data_blocks / 4);
    if volume_blocks == 0 || 4 * volume_blocks > data_blocks {
        return Err(SchemeError::Config(format!(
            "volumes of {volume_blocks} blocks do not fit a quarter of the {data_blocks}-block data region"
        )));
    }
    if (params.beta as u64) > data_blocks {
        return Err(SchemeError::Config(format!("beta {} exceeds data region of {data_blocks}", params.beta)));
    }
    Ok(Layout { map_blocks: mb, data_blocks, volume_blocks })
}

#[derive(Debug)]
pub struct Hive {
    geometry: Geometry,
    params: HiveParams,
    dev: Option<BlockDevice>,
    rng: SeededRng,
    layout: Layout,
    maps: [Vec<Option<u64>>; 2],
    stashes: [VecDeque<(u64, Vec<u8>)>; 2],
    owner: Vec<Option<(Level, u64)>>,
    steps: u64,
}

impl Hive {
    pub fn new(geometry: Geometry, params: HiveParams) -> Self {
        Hive {
            geometry,
            params,
            dev: None,
            rng: SeededRng::new(0),
            layout: Layout { map_blocks: 0, data_blocks: 0, volume_blocks: 0 },
            maps: [Vec::new(), Vec::new()],
            stashes: [VecDeque::new(), VecDeque::new()],
            owner: Vec::new(),
            steps: 0,
        }
    }

    pub fn params(&self) -> HiveParams {
        self.params
    }

    /// First physical block of the data region.
    pub fn data_start(&self) -> u64 {
        2 * self.layout.map_blocks
    }

    pub fn data_blocks(&self) -> u64 {
        self.layout.data_blocks
    }

    pub fn map_blocks_per_volume(&self) -> u64 {
        self.layout.map_blocks
    }

    pub fn stash_len(&self, level: Level) -> usize {
        self.stashes[level_index(level)].len()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Data-region block currently holding `addr`, if it has been placed.
    pub fn location(&self, level: Level, addr: u64) -> Option<u64> {
        self.maps[level_index(level)].get(addr as usize).copied().flatten()
    }

    fn payload_len(&self) -> usize {
        self.geometry.unit_len().saturating_sub(CIPHERTEXT_OVERHEAD + ADDR_LEN)
    }

    fn dev(&mut self) -> &mut BlockDevice {
        self.dev.as_mut().expect("hive used before setup")
    }

    /// Decides what a step does with the sampled data blocks, given the
    /// current occupancy and stash sizes. Never targets an occupied block
    /// with a placement.
    pub fn allocate(&self, sampled: &[u64]) -> Vec<Placement> {
        let mut pending = [self.stashes[0].len(), self.stashes[1].len()];
        sampled
            .iter()
            .map(|&block| {
                if self.owner[block as usize].is_some() {
                    Placement::Reencrypt { block }
                } else if pending[1] > 0 {
                    pending[1] -= 1;
                    Placement::Place { block, level: Level::Hid }
                } else if pending[0] > 0 {
                    pending[0] -= 1;
                    Placement::Place { block, level: Level::Pub }
                } else {
                    Placement::Noise { block }
                }
            })
            .collect()
    }

    fn enqueue(&mut self, level: Level, addr: u64, data: &[u8]) -> Result<(), SchemeError> {
        let stash = &mut self.stashes[level_index(level)];
        if let Some(slot) = stash.iter_mut().find(|(a, _)| *a == addr) {
            slot.1 = data.to_vec();
            return Ok(());
        }
        if stash.len() >= self.params.stash_capacity {
            return Err(SchemeError::StashOverflow { level, capacity: self.params.stash_capacity });
        }
        stash.push_back((addr, data.to_vec()));
        Ok(())
    }

    fn seal(&mut self, keys: &KeyPair, level: Level, addr: u64, data: &[u8]) -> Vec<u8> {
        let mut plain = Vec::with_capacity(ADDR_LEN + data.len());
        plain.extend_from_slice(&addr.to_le_bytes());
        plain.extend_from_slice(data);
        encrypt(keys.for_level(level), &plain, &mut self.rng)
    }

    fn step(&mut self, keys: &KeyPair) -> Result<(), SchemeError> {
        let sampled: Vec<u64> = sample(&mut self.rng, self.layout.data_blocks as usize, self.params.beta)
            .into_iter()
            .map(|b| b as u64)
            .collect();
        let base = self.data_start();
        for placement in self.allocate(&sampled) {
            match placement {
                Placement::Place { block, level } => {
                    let (addr, data) = self.stashes[level_index(level)].pop_front().expect("planned from stash size");
                    let ct = self.seal(keys, level, addr, &data);
                    self.dev().write_block(base + block, &ct)?;
                    let map = &mut self.maps[level_index(level)];
                    if let Some(old) = map[addr as usize].replace(block) {
                        self.owner[old as usize] = None;
                    }
                    self.owner[block as usize] = Some((level, addr));
                }
                Placement::Reencrypt { block } => match self.owner[block as usize] {
                    Some((level, addr)) => {
                        let ct = self.dev().read_block(base + block)?;
                        let plain = open(keys.for_level(level), &ct, "hive data block")?;
                        let fresh = encrypt(keys.for_level(level), &plain, &mut self.rng);
                        debug_assert_eq!(u64::from_le_bytes(plain[..ADDR_LEN].try_into().unwrap()), addr);
                        self.dev().write_block(base + block, &fresh)?;
                    }
                    // Released earlier in this step.
                    None => self.write_noise(base + block)?,
                },
                Placement::Noise { block } => self.write_noise(base + block)?,
            }
        }
        self.steps += 1;
        Ok(())
    }

    fn write_noise(&mut self, phys: u64) -> Result<(), SchemeError> {
        let noise = self.rng.bytes(self.geometry.unit_len());
        self.dev().write_block(phys, &noise)?;
        Ok(())
    }

    fn flush_maps(&mut self, keys: &KeyPair) -> Result<(), SchemeError> {
        let chunk = (self.geometry.unit_len() - CIPHERTEXT_OVERHEAD) / MAP_ENTRY_LEN;
        for level in [Level::Pub, Level::Hid] {
            let li = level_index(level);
            let mut bytes = Vec::with_capacity(self.layout.map_blocks as usize * chunk * MAP_ENTRY_LEN);
            for e in &self.maps[li] {
                bytes.extend_from_slice(&e.map_or(UNMAPPED, |b| b as u32).to_le_bytes());
            }
            bytes.resize(self.layout.map_blocks as usize * chunk * MAP_ENTRY_LEN, 0xFF);
            let plain_len = self.geometry.unit_len() - CIPHERTEXT_OVERHEAD;
            for (i, part) in bytes.chunks(chunk * MAP_ENTRY_LEN).enumerate() {
                let mut plain = part.to_vec();
                plain.resize(plain_len, 0xFF);
                let ct = encrypt(keys.for_level(level), &plain, &mut self.rng);
                let phys = li as u64 * self.layout.map_blocks + i as u64;
                self.dev().write_block(phys, &ct)?;
            }
        }
        Ok(())
    }

    /// Rebuilds position maps and occupancy from the metadata region, as
    /// after a restart. Stash contents are client memory and are lost.
    pub fn remount(&mut self, keys: &KeyPair) -> Result<(), SchemeError> {
        let vol = self.layout.volume_blocks as usize;
        let chunk = (self.geometry.unit_len() - CIPHERTEXT_OVERHEAD) / MAP_ENTRY_LEN;
        self.owner = vec![None; self.layout.data_blocks as usize];
        for level in [Level::Pub, Level::Hid] {
            let li = level_index(level);
            let mut bytes = Vec::new();
            for i in 0..self.layout.map_blocks {
                let phys = li as u64 * self.layout.map_blocks + i;
                let ct = self.dev().read_block(phys)?;
                let plain = open(keys.for_level(level), &ct, "hive position map")?;
                bytes.extend_from_slice(&plain[..chunk * MAP_ENTRY_LEN]);
            }
            let map: Vec<Option<u64>> = bytes
                .chunks_exact(MAP_ENTRY_LEN)
                .take(vol)
                .map(|c| {
                    let v = u32::from_le_bytes(c.try_into().unwrap());
                    (v != UNMAPPED).then_some(v as u64)
                })
                .collect();
            for (addr, b) in map.iter().enumerate() {
                if let Some(b) = b {
                    self.owner[*b as usize] = Some((level, addr as u64));
                }
            }
            self.maps[li] = map;
            self.stashes[li].clear();
        }
        Ok(())
    }

    fn read(&mut self, keys: &KeyPair, level: Level, addr: u64) -> Result<Vec<u8>, SchemeError> {
        if let Some((_, d)) = self.stashes[level_index(level)].iter().find(|(a, _)| *a == addr) {
            return Ok(d.clone());
        }
        let block = self.location(level, addr).ok_or(SchemeError::NotFound { level, addr })?;
        let phys = self.data_start() + block;
        let ct = self.dev().read_block(phys)?;
        let plain = open(keys.for_level(level), &ct, "hive data block")?;
        if plain[..ADDR_LEN] != addr.to_le_bytes() {
            return Err(SchemeError::Corrupt(format!("block {phys} does not hold address {addr}")));
        }
        Ok(plain[ADDR_LEN..].to_vec())
    }
}

impl PdScheme for Hive {
    fn id(&self) -> SchemeId {
        match self.params.mode {
            HiveMode::Paired => SchemeId::Hive,
            HiveMode::PerRequest => SchemeId::HiveB,
        }
    }

    fn layer(&self) -> Layer {
        Layer::Bd
    }

    fn rules(&self) -> RuleSet {
        match self.params.mode {
            HiveMode::Paired => RuleSet::hive(),
            HiveMode::PerRequest => RuleSet::hive_b(),
        }
    }

    fn setup(&mut self, lambda: SecurityParam, rng: &mut SeededRng) -> Result<KeyPair, SchemeError> {
        lambda.check()?;
        self.layout = layout(self.geometry, &self.params)?;
        let keys = KeyPair::generate(rng);
        self.rng = rng.fork(2);
        self.dev = Some(BlockDevice::from_geometry(self.geometry, &mut self.rng)?);
        let vol = self.layout.volume_blocks as usize;
        self.maps = [vec![None; vol], vec![None; vol]];
        self.stashes = [VecDeque::new(), VecDeque::new()];
        self.owner = vec![None; self.layout.data_blocks as usize];
        self.steps = 0;
        self.flush_maps(&keys)?;
        Ok(keys)
    }

    fn oper(&mut self, pattern: &Pattern, keys: &KeyPair) -> Result<Vec<Vec<u8>>, SchemeError> {
        check_vocabulary(self.layer(), pattern, self.block_payload_len())?;
        if self.dev.is_none() {
            return Err(SchemeError::NotSetUp);
        }
        let per_request = self.params.mode == HiveMode::PerRequest;
        let mut reads = Vec::new();
        let mut stepped = false;
        for r in pattern {
            let level = r.level();
            if matches!(r.op(), ReqOp::Read | ReqOp::Write) && r.addr() >= self.layout.volume_blocks {
                return Err(SchemeError::VolumeFull { level, addr: r.addr(), capacity: self.layout.volume_blocks });
            }
            let run_step = match r.op() {
                ReqOp::Write => {
                    self.enqueue(level, r.addr(), r.data().unwrap_or_default())?;
                    per_request || level == Level::Pub
                }
                ReqOp::Read => {
                    reads.push(self.read(keys, level, r.addr())?);
                    per_request
                }
                ReqOp::Dummy => per_request,
                ReqOp::Delete | ReqOp::Unmount => false,
            };
            if run_step {
                self.step(keys)?;
                stepped = true;
            }
        }
        if stepped {
            self.flush_maps(keys)?;
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
        self.payload_len()
    }

    fn capacity(&self, _level: Level) -> u64 {
        self.layout.volume_blocks
    }

    fn space_utilization(&self) -> f64 {
        if self.layout.data_blocks == 0 {
            return 0.0;
        }
        (2 * self.layout.volume_blocks) as f64 / self.layout.data_blocks as f64
    }
}
