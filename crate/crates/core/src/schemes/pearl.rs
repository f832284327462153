//! Flash translation layer that hides data in second-generation WOM writes.
//!
//! Public pages are encrypted and written with the first WOM generation into
//! fresh erased pages. Overwriting or deleting a public page marks the old
//! copy invalid; such first-invalid pages can take one more write, using the
//! second WOM generation, without an erase. Hidden writes use exactly that
//! second write: the hidden ciphertext is programmed over a first-invalid
//! page, which afterwards looks like a twice-written obsolete page. When the
//! erased pages run out, public writes also fall back to second-generation
//! rewrites of first-invalid pages.
//!
//! The hidden index lives in memory while the hidden volume is mounted and
//! is flushed, encrypted, into second-generation pages on `Unmount`. It is
//! recovered by trial decryption with the hidden key.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::crypto::{decrypt, encrypt, Key, KeyPair, SeededRng, CIPHERTEXT_OVERHEAD};
use crate::device::{FlashDevice, Geometry, Medium, OpTrace, Snapshot, Spare};
use crate::pattern::{Level, Pattern, ReqOp};
use crate::rules::RuleSet;
use crate::scheme::{check_vocabulary, Layer, PdScheme, SchemeError, SchemeId, SecurityParam};

use super::wom::{page_capacity_bytes, WomCode, WomError};

const TAG_PUBLIC: u8 = 0;
const TAG_HIDDEN: u8 = 1;
const TAG_INDEX: u8 = 2;
/// tag, address (or chunk number), sequence number.
const HEADER_LEN: usize = 9;
const INDEX_ENTRY_LEN: usize = 8;
/// entry count, total chunk count.
const INDEX_PREFIX_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PearlParams {
    /// Logical pages of the public volume; defaults to half the device.
    pub public_pages: Option<u64>,
    /// Logical pages of the hidden volume; defaults to an eighth.
    pub hidden_pages: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageState {
    Erased,
    /// Live public page, first generation.
    Public(u64),
    /// Live public page, second generation.
    PublicRewritten(u64),
    /// Obsolete first-generation page; can take one more write.
    FirstInvalid,
    /// Obsolete page with nothing left to give (as far as the public view
    /// knows).
    Dead,
    /// Live hidden page. Only known while the hidden volume is mounted.
    Hidden(u64),
    /// Current hidden index chunk. Only known while mounted.
    HiddenIndex,
}

impl PageState {
    fn is_live(self) -> bool {
        matches!(
            self,
            PageState::Public(_) | PageState::PublicRewritten(_) | PageState::Hidden(_) | PageState::HiddenIndex
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct HiddenView {
    index: HashMap<u64, u64>,
    dirty: bool,
}

/// What an explicit garbage collection pass did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GcReport {
    pub erased_blocks: u64,
    pub relocated_public: u64,
    pub relocated_hidden: u64,
    /// Hidden pages dropped because no cover page was left for them.
    pub lost_hidden: u64,
}

#[derive(Debug)]
pub struct Pearl {
    geometry: Geometry,
    params: PearlParams,
    code: WomCode,
    dev: Option<FlashDevice>,
    rng: SeededRng,
    state: Vec<PageState>,
    pub_map: HashMap<u64, u64>,
    free: VecDeque<u64>,
    pool: VecDeque<u64>,
    hidden: Option<HiddenView>,
    generation: u32,
    seq: u32,
}

fn wom_err(e: WomError) -> SchemeError {
    SchemeError::Corrupt(format!("WOM coding failed: {e}"))
}

impl Pearl {
    pub fn new(geometry: Geometry, params: PearlParams) -> Self {
        Pearl {
            geometry,
            params,
            code: WomCode::standard(),
            dev: None,
            rng: SeededRng::new(0),
            state: Vec::new(),
            pub_map: HashMap::new(),
            free: VecDeque::new(),
            pool: VecDeque::new(),
            hidden: None,
            generation: 0,
            seq: 0,
        }
    }

    fn page_bytes(&self) -> usize {
        page_capacity_bytes(self.geometry.unit_len())
    }

    fn dev(&mut self) -> &mut FlashDevice {
        self.dev.as_mut().expect("pearl used before setup")
    }

    pub fn device(&self) -> Option<&FlashDevice> {
        self.dev.as_ref()
    }

    pub fn page_state(&self, page: u64) -> Option<PageState> {
        self.state.get(page as usize).copied()
    }

    pub fn invalid_pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn free_pages(&self) -> usize {
        self.free.len()
    }

    pub fn hidden_mounted(&self) -> bool {
        self.hidden.is_some()
    }

    /// Current hidden index, if mounted.
    pub fn hidden_index(&self) -> Option<&HashMap<u64, u64>> {
        self.hidden.as_ref().map(|h| &h.index)
    }

    fn seal(&mut self, key: &Key, tag: u8, addr: u32, body: &[u8]) -> Vec<u8> {
        let mut plain = Vec::with_capacity(HEADER_LEN + body.len());
        plain.push(tag);
        plain.extend_from_slice(&addr.to_le_bytes());
        plain.extend_from_slice(&self.seq.to_le_bytes());
        plain.extend_from_slice(body);
        plain.resize(self.page_bytes() - CIPHERTEXT_OVERHEAD, 0);
        self.seq = self.seq.wrapping_add(1);
        encrypt(key, &plain, &mut self.rng)
    }

    /// Programs `ct` as a second-generation write over first-invalid `page`.
    /// Hidden content is flagged as already superseded.
    fn rewrite(&mut self, page: u64, ct: &[u8], superseded: bool) -> Result<(), SchemeError> {
        let (cells, _) = self.dev().read_page(page)?;
        let new = self.code.rewrite_bytes(&cells, ct).map_err(wom_err)?;
        let flags = if superseded { Spare::GEN2 | Spare::INVALID2 } else { Spare::GEN2 };
        self.dev().program_page(page, &new, flags)?;
        Ok(())
    }

    fn read_plain(&mut self, page: u64, key: &Key) -> Result<Option<Vec<u8>>, SchemeError> {
        let (cells, spare) = self.dev().read_page(page)?;
        let gen = if spare.contains(Spare::GEN2) { 2 } else { 1 };
        let ct = self.code.decode_bytes(&cells, gen).map_err(wom_err)?;
        Ok(decrypt(key, &ct).ok())
    }

    fn invalidate(&mut self, page: u64) -> Result<(), SchemeError> {
        match self.state[page as usize] {
            PageState::Public(_) => {
                self.dev().mark_page(page, Spare::INVALID)?;
                self.state[page as usize] = PageState::FirstInvalid;
                self.pool.push_back(page);
            }
            PageState::PublicRewritten(_) => {
                self.dev().mark_page(page, Spare::INVALID2)?;
                self.state[page as usize] = PageState::Dead;
            }
            // Hidden pages already carry both invalid flags.
            PageState::Hidden(_) | PageState::HiddenIndex => self.state[page as usize] = PageState::Dead,
            PageState::Erased | PageState::FirstInvalid | PageState::Dead => {}
        }
        Ok(())
    }

    /// Places public `ct` on a fresh page, or as a rewrite when none is left.
    fn place_public(&mut self, addr: u64, ct: &[u8]) -> Result<u64, SchemeError> {
        if let Some(p) = self.free.pop_front() {
            let cells = self.code.encode_bytes(ct);
            self.dev().program_page(p, &cells, Spare::empty())?;
            self.state[p as usize] = PageState::Public(addr);
            Ok(p)
        } else if let Some(q) = self.pool.pop_front() {
            self.rewrite(q, ct, false)?;
            self.state[q as usize] = PageState::PublicRewritten(addr);
            Ok(q)
        } else {
            Err(SchemeError::NoFreePages)
        }
    }

    fn write_public(&mut self, keys: &KeyPair, addr: u64, data: &[u8]) -> Result<(), SchemeError> {
        let ct = self.seal(keys.public(), TAG_PUBLIC, addr as u32, data);
        let page = self.place_public(addr, &ct)?;
        if let Some(old) = self.pub_map.insert(addr, page) {
            self.invalidate(old)?;
        }
        Ok(())
    }

    fn write_hidden(&mut self, keys: &KeyPair, addr: u64, data: &[u8]) -> Result<(), SchemeError> {
        self.mount_hidden(keys.hidden())?;
        let q = self.pool.front().copied().ok_or(SchemeError::NoInvalidPages)?;
        let ct = self.seal(keys.hidden(), TAG_HIDDEN, addr as u32, data);
        self.rewrite(q, &ct, true)?;
        self.pool.pop_front();
        self.state[q as usize] = PageState::Hidden(addr);
        let view = self.hidden.as_mut().expect("mounted above");
        view.dirty = true;
        if let Some(old) = view.index.insert(addr, q) {
            self.state[old as usize] = PageState::Dead;
        }
        Ok(())
    }

    fn read(&mut self, keys: &KeyPair, level: Level, addr: u64) -> Result<Vec<u8>, SchemeError> {
        let (page, key, tag) = match level {
            Level::Pub => (self.pub_map.get(&addr).copied(), keys.public(), TAG_PUBLIC),
            Level::Hid => {
                self.mount_hidden(keys.hidden())?;
                (self.hidden.as_ref().and_then(|h| h.index.get(&addr).copied()), keys.hidden(), TAG_HIDDEN)
            }
        };
        let page = page.ok_or(SchemeError::NotFound { level, addr })?;
        let plain = self
            .read_plain(page, key)?
            .ok_or_else(|| SchemeError::Corrupt(format!("page {page} failed authentication")))?;
        if plain[0] != tag || plain[1..5] != (addr as u32).to_le_bytes() {
            return Err(SchemeError::Corrupt(format!("page {page} does not hold {level:?} address {addr}")));
        }
        Ok(plain[HEADER_LEN..HEADER_LEN + self.block_payload_len()].to_vec())
    }

    fn delete(&mut self, level: Level, addr: u64) -> Result<(), SchemeError> {
        match level {
            Level::Pub => {
                if let Some(p) = self.pub_map.remove(&addr) {
                    self.invalidate(p)?;
                }
            }
            Level::Hid => {
                if let Some(view) = self.hidden.as_mut() {
                    if let Some(p) = view.index.remove(&addr) {
                        view.dirty = true;
                        self.state[p as usize] = PageState::Dead;
                    }
                }
            }
        }
        Ok(())
    }

    /// Mounts the hidden volume by trial-decrypting every twice-written
    /// obsolete page with `key`. A no-op when already mounted. With a wrong
    /// key the hidden view is empty.
    pub fn mount_hidden(&mut self, key: &Key) -> Result<(), SchemeError> {
        if self.hidden.is_some() {
            return Ok(());
        }
        if self.dev.is_none() {
            return Err(SchemeError::NotSetUp);
        }
        // generation -> chunk number -> (page, entries, total chunks)
        let mut chunks: HashMap<u32, HashMap<u32, (u64, Vec<(u64, u64)>, u16)>> = HashMap::new();
        for page in 0..self.state.len() as u64 {
            if self.state[page as usize] != PageState::Dead || !self.dev().spare(page)?.contains(Spare::GEN2 | Spare::INVALID2) {
                continue;
            }
            let Some(plain) = self.read_plain(page, key)? else { continue };
            if plain[0] != TAG_INDEX {
                continue;
            }
            let chunk_no = u32::from_le_bytes(plain[1..5].try_into().unwrap());
            let gen = u32::from_le_bytes(plain[5..9].try_into().unwrap());
            let body = &plain[HEADER_LEN..];
            let count = body[0] as usize;
            let total = u16::from_le_bytes([body[1], body[2]]);
            let entries = body[INDEX_PREFIX_LEN..INDEX_PREFIX_LEN + count * INDEX_ENTRY_LEN]
                .chunks_exact(INDEX_ENTRY_LEN)
                .map(|e| {
                    (
                        u32::from_le_bytes(e[..4].try_into().unwrap()) as u64,
                        u32::from_le_bytes(e[4..].try_into().unwrap()) as u64,
                    )
                })
                .collect();
            chunks.entry(gen).or_default().insert(chunk_no, (page, entries, total));
        }
        let latest = chunks
            .iter()
            .filter(|(_, c)| c.values().next().is_some_and(|(_, _, total)| c.len() == *total as usize))
            .max_by_key(|(g, _)| **g);
        let mut view = HiddenView::default();
        if let Some((&gen, parts)) = latest {
            self.generation = self.generation.max(gen + 1);
            for (page, entries, _) in parts.values() {
                self.state[*page as usize] = PageState::HiddenIndex;
                for &(addr, p) in entries {
                    view.index.insert(addr, p);
                    self.state[p as usize] = PageState::Hidden(addr);
                }
            }
        }
        self.hidden = Some(view);
        Ok(())
    }

    fn index_chunk_entries(&self) -> usize {
        (self.page_bytes() - CIPHERTEXT_OVERHEAD - HEADER_LEN - INDEX_PREFIX_LEN) / INDEX_ENTRY_LEN
    }

    /// Flushes the hidden index (if it changed) and forgets all hidden state.
    pub fn unmount(&mut self, keys: &KeyPair) -> Result<(), SchemeError> {
        let Some(view) = self.hidden.as_ref() else { return Ok(()) };
        if view.dirty {
            let mut entries: Vec<(u64, u64)> = view.index.iter().map(|(&a, &p)| (a, p)).collect();
            entries.sort_unstable();
            let per = self.index_chunk_entries().min(u8::MAX as usize);
            let parts: Vec<&[(u64, u64)]> = if entries.is_empty() { vec![&[]] } else { entries.chunks(per).collect() };
            if self.pool.len() < parts.len() {
                return Err(SchemeError::NoInvalidPages);
            }
            let total = parts.len() as u16;
            let bodies: Vec<Vec<u8>> = parts
                .iter()
                .map(|part| {
                    let mut body = vec![part.len() as u8];
                    body.extend_from_slice(&total.to_le_bytes());
                    for &(a, p) in *part {
                        body.extend_from_slice(&(a as u32).to_le_bytes());
                        body.extend_from_slice(&(p as u32).to_le_bytes());
                    }
                    body
                })
                .collect();
            for s in self.state.iter_mut().filter(|s| **s == PageState::HiddenIndex) {
                *s = PageState::Dead;
            }
            let saved_seq = self.seq;
            for (i, body) in bodies.iter().enumerate() {
                let q = self.pool.pop_front().expect("checked above");
                self.seq = self.generation;
                let ct = self.seal(keys.hidden(), TAG_INDEX, i as u32, body);
                self.rewrite(q, &ct, true)?;
                self.state[q as usize] = PageState::Dead;
            }
            self.seq = saved_seq;
            self.generation += 1;
        }
        for s in self.state.iter_mut() {
            if matches!(s, PageState::Hidden(_) | PageState::HiddenIndex) {
                *s = PageState::Dead;
            }
        }
        self.hidden = None;
        Ok(())
    }

    /// Erases victim blocks (fewest live pages first) until at least
    /// `min_free` erased pages exist or no block can be reclaimed. Live
    /// public pages are relocated; hidden pages are relocated only while the
    /// hidden volume is mounted and are otherwise lost with their block.
    pub fn gc(&mut self, keys: &KeyPair, min_free: usize) -> Result<GcReport, SchemeError> {
        if self.dev.is_none() {
            return Err(SchemeError::NotSetUp);
        }
        let ppb = match self.geometry {
            Geometry::Flash { pages_per_block, .. } => pages_per_block,
            Geometry::Block { .. } => unreachable!("validated at setup"),
        };
        let blocks = self.state.len() as u64 / ppb;
        let mut report = GcReport::default();
        while self.free.len() < min_free {
            // Public pages move to fresh pages and hidden pages to cover
            // pages outside the victim, so a victim is only taken when both
            // fit.
            let victim = (0..blocks)
                .filter(|&b| (b * ppb..(b + 1) * ppb).all(|p| self.state[p as usize] != PageState::Erased))
                .filter_map(|b| {
                    let pages = b * ppb..(b + 1) * ppb;
                    let count = |f: fn(PageState) -> bool| pages.clone().filter(|&p| f(self.state[p as usize])).count();
                    let public = count(|s| matches!(s, PageState::Public(_) | PageState::PublicRewritten(_)));
                    let hidden = count(|s| matches!(s, PageState::Hidden(_)));
                    let live = count(PageState::is_live) as u64;
                    let cover = self.pool.iter().filter(|p| !pages.contains(p)).count();
                    (live < ppb && public <= self.free.len() && hidden <= cover).then_some((b, live))
                })
                .min_by_key(|&(b, live)| (live, b));
            let Some((victim, _)) = victim else { break };
            let pages = victim * ppb..(victim + 1) * ppb;
            self.pool.retain(|p| !pages.contains(p));
            for page in pages.clone() {
                match self.state[page as usize] {
                    PageState::Public(addr) | PageState::PublicRewritten(addr) => {
                        let plain = self
                            .read_plain(page, keys.public())?
                            .ok_or_else(|| SchemeError::Corrupt(format!("page {page} failed authentication")))?;
                        let data = plain[HEADER_LEN..HEADER_LEN + self.block_payload_len()].to_vec();
                        let ct = self.seal(keys.public(), TAG_PUBLIC, addr as u32, &data);
                        let p = self.place_public(addr, &ct)?;
                        self.pub_map.insert(addr, p);
                        report.relocated_public += 1;
                    }
                    PageState::Hidden(addr) => {
                        let plain = self
                            .read_plain(page, keys.hidden())?
                            .ok_or_else(|| SchemeError::Corrupt(format!("hidden page {page} failed authentication")))?;
                        let data = plain[HEADER_LEN..HEADER_LEN + self.block_payload_len()].to_vec();
                        let view = self.hidden.as_mut().expect("hidden pages are only tracked while mounted");
                        view.index.remove(&addr);
                        view.dirty = true;
                        if self.pool.is_empty() {
                            report.lost_hidden += 1;
                        } else {
                            self.write_hidden(keys, addr, &data)?;
                            report.relocated_hidden += 1;
                        }
                    }
                    PageState::HiddenIndex => {
                        if let Some(view) = self.hidden.as_mut() {
                            view.dirty = true;
                        }
                    }
                    _ => {}
                }
            }
            self.dev().erase_block(victim)?;
            for page in pages {
                self.state[page as usize] = PageState::Erased;
                self.free.push_back(page);
            }
            report.erased_blocks += 1;
        }
        Ok(report)
    }
}

impl PdScheme for Pearl {
    fn id(&self) -> SchemeId {
        SchemeId::Pearl
    }

    fn layer(&self) -> Layer {
        Layer::Ftl
    }

    fn rules(&self) -> RuleSet {
        RuleSet::pearl()
    }

    fn setup(&mut self, lambda: SecurityParam, rng: &mut SeededRng) -> Result<KeyPair, SchemeError> {
        lambda.check()?;
        if !matches!(self.geometry, Geometry::Flash { .. }) {
            return Err(SchemeError::Config("pearl needs a flash geometry".into()));
        }
        if !self.geometry.unit_len().is_multiple_of(12) {
            return Err(SchemeError::Config("cells per page must be a multiple of 12 (one byte per 4 codewords)".into()));
        }
        if self.page_bytes() < CIPHERTEXT_OVERHEAD + HEADER_LEN + INDEX_PREFIX_LEN + INDEX_ENTRY_LEN {
            return Err(SchemeError::Config(format!("a page of {} bytes is too small for pearl", self.page_bytes())));
        }
        let pages = self.geometry.units();
        if self.capacity(Level::Pub) + self.capacity(Level::Hid) > pages || self.capacity(Level::Pub) == 0 {
            return Err(SchemeError::Config("volume sizes exceed the device".into()));
        }
        let dev = FlashDevice::from_geometry(self.geometry)?;
        let keys = KeyPair::generate(rng);
        self.rng = rng.fork(4);
        self.state = vec![PageState::Erased; pages as usize];
        self.free = (0..pages).collect();
        self.pool.clear();
        self.pub_map.clear();
        self.hidden = None;
        self.generation = 0;
        self.seq = 0;
        self.dev = Some(dev);
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
            if matches!(r.op(), ReqOp::Read | ReqOp::Write | ReqOp::Delete) && r.addr() >= cap {
                return Err(SchemeError::VolumeFull { level, addr: r.addr(), capacity: cap });
            }
            match (r.op(), level) {
                (ReqOp::Write, Level::Pub) => self.write_public(keys, r.addr(), r.data().unwrap_or_default())?,
                (ReqOp::Write, Level::Hid) => self.write_hidden(keys, r.addr(), r.data().unwrap_or_default())?,
                (ReqOp::Read, _) => reads.push(self.read(keys, level, r.addr())?),
                (ReqOp::Delete, _) => self.delete(level, r.addr())?,
                (ReqOp::Unmount, _) => self.unmount(keys)?,
                (ReqOp::Dummy, _) => {}
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
        self.page_bytes().saturating_sub(CIPHERTEXT_OVERHEAD + HEADER_LEN)
    }

    fn capacity(&self, level: Level) -> u64 {
        let pages = self.geometry.units();
        match level {
            Level::Pub => self.params.public_pages.unwrap_or(pages / 2),
            Level::Hid => self.params.hidden_pages.unwrap_or(pages / 8),
        }
    }

    /// Encodable bits per generation over raw cells.
    fn space_utilization(&self) -> f64 {
        let cells = self.geometry.unit_len();
        if cells == 0 {
            return 0.0;
        }
        (page_capacity_bytes(cells) * 8) as f64 / cells as f64
    }

    /// Frees erase blocks until a quarter of the device is erased.
    fn collect_garbage(&mut self, keys: &KeyPair) -> Result<u64, SchemeError> {
        let target = self.state.len() / 4;
        Ok(self.gc(keys, target)?.erased_blocks)
    }
}
