//! Log-structured deniable storage with paired hidden payloads.
//!
//! The device is a ring of pair slots. Slot `s` occupies blocks `2s` (the
//! public block) and `2s + 1` (the payload block). Every public write appends
//! one pair at the head: the public data encrypted under the public key and,
//! in the payload block, either the next queued hidden write encrypted under
//! the hidden key or random bytes. Hidden writes only ever travel inside
//! payload blocks, so the write trace is a function of the public requests
//! alone.
//!
//! When the ring is full the tail slot is cleaned: a live public block is
//! re-appended at the head and a live hidden payload goes back to the front
//! of the hidden queue. Each volume is capped at half the number of slots,
//! which keeps at least half of the ring reclaimable.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::crypto::{decrypt, encrypt, KeyPair, SeededRng, CIPHERTEXT_OVERHEAD};
use crate::device::{BlockDevice, Geometry, Medium, OpTrace, Snapshot};
use crate::pattern::{Level, Pattern, ReqOp};
use crate::rules::RuleSet;
use crate::scheme::{check_vocabulary, Layer, PdScheme, SchemeError, SchemeId, SecurityParam};

use super::open;

const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdDmParams {
    /// Public writes the adversary must issue per hidden write.
    pub phi: f64,
    /// Maximum number of hidden writes waiting for a payload slot.
    pub queue_bound: usize,
}

impl Default for PdDmParams {
    fn default() -> Self {
        PdDmParams { phi: 1.0, queue_bound: 128 }
    }
}

#[derive(Debug)]
pub struct PdDm {
    geometry: Geometry,
    params: PdDmParams,
    dev: Option<BlockDevice>,
    rng: SeededRng,
    slots: u64,
    head: u64,
    tail: u64,
    used: u64,
    seq: u64,
    pub_map: HashMap<u64, u64>,
    hid_map: HashMap<u64, u64>,
    slot_pub: Vec<Option<u64>>,
    slot_hid: Vec<Option<u64>>,
    hid_queue: VecDeque<(u64, Vec<u8>)>,
}

fn frame(seq: u64, addr: u64, data: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(HEADER_LEN + data.len());
    v.extend_from_slice(&seq.to_le_bytes());
    v.extend_from_slice(&addr.to_le_bytes());
    v.extend_from_slice(data);
    v
}

fn unframe(plain: &[u8]) -> (u64, u64, &[u8]) {
    let seq = u64::from_le_bytes(plain[..8].try_into().unwrap());
    let addr = u64::from_le_bytes(plain[8..16].try_into().unwrap());
    (seq, addr, &plain[HEADER_LEN..])
}

impl PdDm {
    pub fn new(geometry: Geometry, params: PdDmParams) -> Self {
        PdDm {
            geometry,
            params,
            dev: None,
            rng: SeededRng::new(0),
            slots: 0,
            head: 0,
            tail: 0,
            used: 0,
            seq: 0,
            pub_map: HashMap::new(),
            hid_map: HashMap::new(),
            slot_pub: Vec::new(),
            slot_hid: Vec::new(),
            hid_queue: VecDeque::new(),
        }
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    pub fn used_slots(&self) -> u64 {
        self.used
    }

    pub fn queue_len(&self) -> usize {
        self.hid_queue.len()
    }

    fn dev(&mut self) -> &mut BlockDevice {
        self.dev.as_mut().expect("pd_dm used before setup")
    }

    fn block_size(&self) -> usize {
        self.geometry.unit_len()
    }

    fn enqueue_hidden(&mut self, addr: u64, data: &[u8]) -> Result<(), SchemeError> {
        if let Some(slot) = self.hid_queue.iter_mut().find(|(a, _)| *a == addr) {
            slot.1 = data.to_vec();
            return Ok(());
        }
        if self.hid_queue.len() >= self.params.queue_bound {
            return Err(SchemeError::QueueOverflow { bound: self.params.queue_bound });
        }
        self.hid_queue.push_back((addr, data.to_vec()));
        Ok(())
    }

    /// Writes one pair at the head. The caller guarantees a free slot.
    fn append(&mut self, keys: &KeyPair, addr: u64, data: &[u8]) -> Result<(), SchemeError> {
        debug_assert!(self.used < self.slots);
        let slot = self.head;
        let seq = self.seq;
        let pub_ct = encrypt(keys.public(), &frame(seq, addr, data), &mut self.rng);
        let payload = match self.hid_queue.pop_front() {
            Some((ha, hd)) => {
                if let Some(old) = self.hid_map.insert(ha, slot) {
                    self.slot_hid[old as usize] = None;
                }
                self.slot_hid[slot as usize] = Some(ha);
                encrypt(keys.hidden(), &frame(seq, ha, &hd), &mut self.rng)
            }
            None => {
                self.slot_hid[slot as usize] = None;
                self.rng.bytes(self.block_size())
            }
        };
        self.dev().write_block(2 * slot, &pub_ct)?;
        self.dev().write_block(2 * slot + 1, &payload)?;
        if let Some(old) = self.pub_map.insert(addr, slot) {
            self.slot_pub[old as usize] = None;
        }
        self.slot_pub[slot as usize] = Some(addr);
        self.head = (self.head + 1) % self.slots;
        self.used += 1;
        self.seq += 1;
        Ok(())
    }

    /// Frees the tail slot. Returns `true` if nothing live had to move.
    fn clean_tail(&mut self, keys: &KeyPair) -> Result<bool, SchemeError> {
        let s = self.tail;
        self.tail = (self.tail + 1) % self.slots;
        self.used -= 1;
        let mut reclaimed = true;
        if let Some(ha) = self.slot_hid[s as usize].take() {
            self.hid_map.remove(&ha);
            if !self.hid_queue.iter().any(|(a, _)| *a == ha) {
                let ct = self.dev().read_block(2 * s + 1)?;
                let plain = open(keys.hidden(), &ct, "hidden payload")?;
                let (_, _, data) = unframe(&plain);
                if self.hid_queue.len() >= self.params.queue_bound {
                    return Err(SchemeError::QueueOverflow { bound: self.params.queue_bound });
                }
                self.hid_queue.push_front((ha, data.to_vec()));
                reclaimed = false;
            }
        }
        if let Some(pa) = self.slot_pub[s as usize].take() {
            self.pub_map.remove(&pa);
            let ct = self.dev().read_block(2 * s)?;
            let plain = open(keys.public(), &ct, "public block")?;
            let data = unframe(&plain).2.to_vec();
            self.append(keys, pa, &data)?;
            reclaimed = false;
        }
        Ok(reclaimed)
    }

    fn make_room(&mut self, keys: &KeyPair) -> Result<(), SchemeError> {
        let mut cleaned = 0;
        while self.used == self.slots {
            if cleaned >= self.slots {
                return Err(SchemeError::LogFull);
            }
            self.clean_tail(keys)?;
            cleaned += 1;
        }
        Ok(())
    }

    /// Cleans up to `segment` slots at the tail of the log, re-appending
    /// live public data at the head. Returns the number of slots that held
    /// nothing live.
    pub fn gc(&mut self, keys: &KeyPair, segment: u64) -> Result<u64, SchemeError> {
        if self.dev.is_none() {
            return Err(SchemeError::NotSetUp);
        }
        let mut reclaimed = 0;
        for _ in 0..segment.min(self.used) {
            if self.clean_tail(keys)? {
                reclaimed += 1;
            }
        }
        Ok(reclaimed)
    }

    /// Rebuilds the in-memory state by replaying the log on the device.
    /// Hidden writes still waiting in the queue are client memory and are
    /// lost.
    pub fn remount(&mut self, keys: &KeyPair) -> Result<(), SchemeError> {
        let mut pub_latest: HashMap<u64, (u64, u64)> = HashMap::new();
        let mut hid_latest: HashMap<u64, (u64, u64)> = HashMap::new();
        let mut written: Vec<(u64, u64)> = Vec::new();
        for s in 0..self.slots {
            let ct = self.dev().read_block(2 * s)?;
            let Ok(plain) = decrypt(keys.public(), &ct) else { continue };
            let (seq, addr, _) = unframe(&plain);
            written.push((seq, s));
            if pub_latest.get(&addr).is_none_or(|&(q, _)| seq > q) {
                pub_latest.insert(addr, (seq, s));
            }
            let pct = self.dev().read_block(2 * s + 1)?;
            if let Ok(hp) = decrypt(keys.hidden(), &pct) {
                let (hseq, haddr, _) = unframe(&hp);
                if hid_latest.get(&haddr).is_none_or(|&(q, _)| hseq > q) {
                    hid_latest.insert(haddr, (hseq, s));
                }
            }
        }
        self.pub_map.clear();
        self.hid_map.clear();
        self.slot_pub = vec![None; self.slots as usize];
        self.slot_hid = vec![None; self.slots as usize];
        self.hid_queue.clear();
        for (addr, (_, s)) in pub_latest {
            self.pub_map.insert(addr, s);
            self.slot_pub[s as usize] = Some(addr);
        }
        for (addr, (_, s)) in hid_latest {
            self.hid_map.insert(addr, s);
            self.slot_hid[s as usize] = Some(addr);
        }
        written.sort_unstable();
        self.used = written.len() as u64;
        match (written.first(), written.last()) {
            (Some(&(_, first)), Some(&(last_seq, last))) => {
                self.tail = first;
                self.head = (last + 1) % self.slots;
                self.seq = last_seq + 1;
            }
            _ => {
                self.tail = 0;
                self.head = 0;
            }
        }
        Ok(())
    }

    fn read(&mut self, keys: &KeyPair, level: Level, addr: u64) -> Result<Vec<u8>, SchemeError> {
        let (slot, block, key) = match level {
            Level::Pub => {
                let s = *self.pub_map.get(&addr).ok_or(SchemeError::NotFound { level, addr })?;
                (s, 2 * s, keys.public())
            }
            Level::Hid => {
                if let Some((_, d)) = self.hid_queue.iter().find(|(a, _)| *a == addr) {
                    return Ok(d.clone());
                }
                let s = *self.hid_map.get(&addr).ok_or(SchemeError::NotFound { level, addr })?;
                (s, 2 * s + 1, keys.hidden())
            }
        };
        let ct = self.dev().read_block(block)?;
        let plain = open(key, &ct, "log block")?;
        let (_, stored, data) = unframe(&plain);
        if stored != addr {
            return Err(SchemeError::Corrupt(format!("slot {slot} holds address {stored}, expected {addr}")));
        }
        Ok(data.to_vec())
    }
}

impl PdScheme for PdDm {
    fn id(&self) -> SchemeId {
        SchemeId::PdDm
    }

    fn layer(&self) -> Layer {
        Layer::Bd
    }

    fn rules(&self) -> RuleSet {
        RuleSet::datalair(self.params.phi).expect("phi validated at setup")
    }

    fn setup(&mut self, lambda: SecurityParam, rng: &mut SeededRng) -> Result<KeyPair, SchemeError> {
        lambda.check()?;
        RuleSet::datalair(self.params.phi).map_err(|e| SchemeError::Config(e.to_string()))?;
        let Geometry::Block { num_blocks, block_size } = self.geometry else {
            return Err(SchemeError::Config("pd_dm needs a block geometry".into()));
        };
        if num_blocks < 8 || num_blocks % 2 != 0 {
            return Err(SchemeError::Config(format!("pd_dm needs an even number of at least 8 blocks, got {num_blocks}")));
        }
        if block_size <= CIPHERTEXT_OVERHEAD + HEADER_LEN {
            return Err(SchemeError::Config(format!("block size {block_size} too small for pd_dm")));
        }
        if self.params.queue_bound == 0 {
            return Err(SchemeError::Config("hidden queue bound must be positive".into()));
        }
        let keys = KeyPair::generate(rng);
        self.rng = rng.fork(3);
        self.dev = Some(BlockDevice::from_geometry(self.geometry, &mut self.rng)?);
        self.slots = num_blocks / 2;
        self.head = 0;
        self.tail = 0;
        self.used = 0;
        self.seq = 0;
        self.pub_map.clear();
        self.hid_map.clear();
        self.slot_pub = vec![None; self.slots as usize];
        self.slot_hid = vec![None; self.slots as usize];
        self.hid_queue.clear();
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
            match (r.op(), level) {
                (ReqOp::Write, Level::Pub) => {
                    self.make_room(keys)?;
                    self.append(keys, r.addr(), r.data().unwrap_or_default())?;
                }
                (ReqOp::Write, Level::Hid) => self.enqueue_hidden(r.addr(), r.data().unwrap_or_default())?,
                (ReqOp::Read, _) => reads.push(self.read(keys, level, r.addr())?),
                _ => {}
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
        self.block_size().saturating_sub(CIPHERTEXT_OVERHEAD + HEADER_LEN)
    }

    fn capacity(&self, _level: Level) -> u64 {
        self.geometry.units() / 4
    }

    fn space_utilization(&self) -> f64 {
        let units = self.geometry.units();
        if units == 0 {
            return 0.0;
        }
        (2 * self.capacity(Level::Pub)) as f64 / units as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{wonly, OpKind};
    use crate::pattern::Request;

    fn setup(blocks: u64, seed: u64) -> (PdDm, KeyPair) {
        let mut s = PdDm::new(Geometry::Block { num_blocks: blocks, block_size: 96 }, PdDmParams::default());
        let keys = s.setup(SecurityParam::default(), &mut SeededRng::new(seed)).unwrap();
        (s, keys)
    }

    fn d(s: &PdDm, b: u8) -> Vec<u8> {
        vec![b; s.block_payload_len()]
    }

    #[test]
    fn public_write_appends_one_pair() {
        let (mut s, keys) = setup(32, 1);
        s.oper(&[Request::write(Level::Pub, 0, d(&s, 1))].into_iter().collect(), &keys).unwrap();
        let w = wonly(&s.take_trace());
        assert_eq!(w.write_locations(), vec![0, 1]);
    }

    #[test]
    fn hidden_write_alone_touches_nothing() {
        let (mut s, keys) = setup(32, 2);
        s.oper(&[Request::write(Level::Hid, 0, d(&s, 1))].into_iter().collect(), &keys).unwrap();
        assert!(s.take_trace().is_empty());
        assert_eq!(s.queue_len(), 1);
    }

    #[test]
    fn write_trace_does_not_depend_on_hidden_requests() {
        let run = |with_hidden: bool| {
            let (mut s, keys) = setup(32, 3);
            for i in 0..40u64 {
                let mut p = Pattern::new();
                p.push(Request::write(Level::Pub, i % 4, d(&s, i as u8)));
                if with_hidden {
                    p.push(Request::write(Level::Hid, i % 4, d(&s, 0xF0)));
                }
                s.oper(&p, &keys).unwrap();
            }
            wonly(&s.take_trace()).write_locations()
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn gc_reclaims_dead_segment() {
        let (mut s, keys) = setup(32, 4);
        for _ in 0..8 {
            s.oper(&[Request::write(Level::Pub, 0, d(&s, 5))].into_iter().collect(), &keys).unwrap();
        }
        assert_eq!(s.used_slots(), 8);
        assert_eq!(s.gc(&keys, 7).unwrap(), 7);
        assert_eq!(s.used_slots(), 1);
        assert_eq!(s.gc(&keys, 1).unwrap(), 0);
        assert_eq!(s.oper(&[Request::read(Level::Pub, 0)].into_iter().collect(), &keys).unwrap(), vec![d(&s, 5)]);
    }

    #[test]
    fn full_ring_keeps_every_live_block() {
        let (mut s, keys) = setup(32, 5);
        let cap = s.capacity(Level::Pub);
        for round in 0..200u64 {
            let mut p = Pattern::new();
            p.push(Request::write(Level::Pub, round % cap, d(&s, round as u8)));
            p.push(Request::write(Level::Hid, round % cap, d(&s, !(round as u8))));
            s.oper(&p, &keys).unwrap();
        }
        for a in 0..cap {
            let last = (0..200u64).filter(|r| r % cap == a).max().unwrap();
            let out = s
                .oper(&[Request::read(Level::Pub, a), Request::read(Level::Hid, a)].into_iter().collect(), &keys)
                .unwrap();
            assert_eq!(out, vec![d(&s, last as u8), d(&s, !(last as u8))]);
        }
    }

    #[test]
    fn queue_overflow() {
        let mut s = PdDm::new(
            Geometry::Block { num_blocks: 32, block_size: 96 },
            PdDmParams { queue_bound: 2, ..PdDmParams::default() },
        );
        let keys = s.setup(SecurityParam::default(), &mut SeededRng::new(6)).unwrap();
        let p: Pattern = (0..3).map(|a| Request::write(Level::Hid, a, vec![0; 48])).collect();
        assert_eq!(s.oper(&p, &keys), Err(SchemeError::QueueOverflow { bound: 2 }));
    }

    #[test]
    fn remount_replays_log() {
        let (mut s, keys) = setup(32, 7);
        for i in 0..30u64 {
            let p: Pattern = [Request::write(Level::Pub, i % 3, d(&s, i as u8)), Request::write(Level::Hid, i % 2, d(&s, 100 + i as u8))]
                .into_iter()
                .collect();
            s.oper(&p, &keys).unwrap();
        }
        // Flush the queue so every hidden write is on the device.
        for _ in 0..4 {
            s.oper(&[Request::write(Level::Pub, 3, d(&s, 0))].into_iter().collect(), &keys).unwrap();
        }
        assert_eq!(s.queue_len(), 0);
        let before = (s.pub_map.clone(), s.hid_map.clone(), s.head, s.tail, s.used);
        s.remount(&keys).unwrap();
        assert_eq!((s.pub_map.clone(), s.hid_map.clone(), s.head, s.tail, s.used), before);
        let out = s
            .oper(&[Request::read(Level::Pub, 2), Request::read(Level::Hid, 1)].into_iter().collect(), &keys)
            .unwrap();
        assert_eq!(out, vec![d(&s, 29), d(&s, 129)]);
        s.take_trace();
        s.oper(&[Request::read(Level::Pub, 0)].into_iter().collect(), &keys).unwrap();
        assert_eq!(s.take_trace().count(OpKind::Write), 0);
    }

    #[test]
    fn utilization_is_half() {
        let (s, _) = setup(256, 0);
        assert_eq!(s.space_utilization(), 0.5);
    }
}
