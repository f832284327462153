//! Random mixed request streams and a runner that executes them one
//! request at a time.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{KeyPair, SeededRng};
use crate::device::OpTrace;
use crate::pattern::{Level, Pattern, ReqOp, Request};
use crate::scheme::{PdScheme, SchemeError};

/// Relative weights of the four request kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpMix {
    pub public_write: f64,
    pub hidden_write: f64,
    pub public_read: f64,
    pub hidden_read: f64,
}

impl Default for OpMix {
    /// Hidden writes stay well below public writes, which the pairing
    /// schemes need to keep their stash or queue bounded.
    fn default() -> Self {
        OpMix { public_write: 0.40, hidden_write: 0.15, public_read: 0.30, hidden_read: 0.15 }
    }
}

impl OpMix {
    fn total(&self) -> f64 {
        self.public_write + self.hidden_write + self.public_read + self.hidden_read
    }

    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.public_write, self.hidden_write, self.public_read, self.hidden_read];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) || self.total() <= 0.0 {
            return Err(format!("op mix weights must be non-negative with a positive sum: {parts:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workload {
    pub ops: usize,
    pub mix: OpMix,
    pub seed: u64,
    /// Restricts each volume to its first `address_space` blocks, so that
    /// writes overwrite each other more often.
    pub address_space: Option<u64>,
    /// Calls the scheme's explicit garbage collection every this many
    /// requests.
    pub gc_every: Option<usize>,
}

impl Default for Workload {
    fn default() -> Self {
        Workload { ops: 1000, mix: OpMix::default(), seed: 0, address_space: None, gc_every: None }
    }
}

impl Workload {
    /// Draws the request stream. Reads only target addresses written
    /// earlier in the stream; a read drawn before any write becomes a write.
    pub fn generate(&self, payload_len: usize, cap_pub: u64, cap_hid: u64) -> Vec<Request> {
        let mut rng = SeededRng::new(self.seed);
        let space = |cap: u64| self.address_space.map_or(cap, |s| s.min(cap)).max(1);
        let (space_pub, space_hid) = (space(cap_pub), space(cap_hid));
        let mut written: [BTreeSet<u64>; 2] = [BTreeSet::new(), BTreeSet::new()];
        let total = self.mix.total();
        let mut out = Vec::with_capacity(self.ops);
        for _ in 0..self.ops {
            let x = rng.random::<f64>() * total;
            let (level, read) = if x < self.mix.public_write {
                (Level::Pub, false)
            } else if x < self.mix.public_write + self.mix.hidden_write {
                (Level::Hid, false)
            } else if x < self.mix.public_write + self.mix.hidden_write + self.mix.public_read {
                (Level::Pub, true)
            } else {
                (Level::Hid, true)
            };
            let (li, cap, sp) = match level {
                Level::Pub => (0, cap_pub, space_pub),
                Level::Hid => (1, cap_hid, space_hid),
            };
            if cap == 0 {
                continue;
            }
            if read && !written[li].is_empty() {
                let idx = rng.random_range(0..written[li].len());
                let addr = *written[li].iter().nth(idx).expect("index in range");
                out.push(Request::read(level, addr));
            } else {
                let addr = rng.random_range(0..sp);
                written[li].insert(addr);
                out.push(Request::write(level, addr, rng.bytes(payload_len)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub public_ops: u64,
    pub hidden_ops: u64,
    #[serde(skip)]
    pub public_time: Duration,
    #[serde(skip)]
    pub hidden_time: Duration,
    /// Requests rejected with a declared capacity error.
    pub capacity_errors: u64,
    pub gc_runs: u64,
}

/// Executes `requests` one pattern per request. Capacity errors are counted
/// and skipped; any other error aborts the run.
pub fn run(
    scheme: &mut dyn PdScheme,
    keys: &KeyPair,
    requests: &[Request],
    gc_every: Option<usize>,
) -> Result<RunStats, SchemeError> {
    run_traced(scheme, keys, requests, gc_every, |_| {})
}

/// Like [`run`], handing the physical trace of every request and garbage
/// collection to `sink` as it is produced.
pub fn run_traced<F: FnMut(OpTrace)>(
    scheme: &mut dyn PdScheme,
    keys: &KeyPair,
    requests: &[Request],
    gc_every: Option<usize>,
    mut sink: F,
) -> Result<RunStats, SchemeError> {
    let mut stats = RunStats::default();
    for (i, r) in requests.iter().enumerate() {
        if let Some(every) = gc_every.filter(|&e| e > 0) {
            if i > 0 && i % every == 0 {
                scheme.collect_garbage(keys)?;
                sink(scheme.take_trace());
                stats.gc_runs += 1;
            }
        }
        let pattern: Pattern = std::iter::once(r.clone()).collect();
        let start = Instant::now();
        let result = scheme.oper(&pattern, keys);
        let elapsed = start.elapsed();
        sink(scheme.take_trace());
        match result {
            Ok(_) => {}
            Err(e) if e.is_capacity() => {
                stats.capacity_errors += 1;
                continue;
            }
            // Reads of blocks whose write was rejected.
            Err(SchemeError::NotFound { .. }) if r.op() == ReqOp::Read => {}
            Err(e) => return Err(e),
        }
        match r.level() {
            Level::Pub => {
                stats.public_ops += 1;
                stats.public_time += elapsed;
            }
            Level::Hid => {
                stats.hidden_ops += 1;
                stats.hidden_time += elapsed;
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_follow_writes() {
        let w = Workload { ops: 500, seed: 3, ..Workload::default() };
        let reqs = w.generate(16, 100, 20);
        assert_eq!(reqs.len(), 500);
        let mut seen = [BTreeSet::new(), BTreeSet::new()];
        for r in &reqs {
            let li = (r.level() == Level::Hid) as usize;
            match r.op() {
                ReqOp::Write => {
                    assert!(r.addr() < [100, 20][li]);
                    assert_eq!(r.data().unwrap().len(), 16);
                    seen[li].insert(r.addr());
                }
                ReqOp::Read => assert!(seen[li].contains(&r.addr())),
                _ => unreachable!(),
            }
        }
        assert_eq!(reqs, w.generate(16, 100, 20));
    }

    #[test]
    fn mix_is_respected() {
        let mix = OpMix { public_write: 1.0, hidden_write: 0.0, public_read: 0.0, hidden_read: 0.0 };
        let w = Workload { ops: 200, mix, ..Workload::default() };
        assert!(w.generate(4, 10, 10).iter().all(|r| r.is_write() && r.level() == Level::Pub));
        assert!(OpMix { public_write: -1.0, ..mix }.validate().is_err());
        assert!(OpMix { public_write: 0.0, ..mix }.validate().is_err());
    }

    #[test]
    fn address_space_limits() {
        let w = Workload { ops: 300, address_space: Some(4), ..Workload::default() };
        assert!(w.generate(4, 100, 100).iter().all(|r| r.addr() < 4));
    }
}
