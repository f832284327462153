//! Throughput of a scheme relative to a baseline without deniability.
//!
//! The baseline is a plain block device of the same number of units where
//! every logical write is encrypted under one key and written in place, and
//! every read is read back and decrypted.
//!
//! Two phases run on fresh instances. The public phase keeps only the
//! public part of the op mix. The hidden phase runs the full mix, and hidden
//! throughput is hidden requests over the time of the whole stream, since
//! hidden progress may depend on the public traffic around it. Each rate is
//! compared with the baseline running the same public or hidden requests.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::crypto::{decrypt, encrypt, Key, KeyPair, SeededRng, CIPHERTEXT_OVERHEAD};
use crate::device::BlockDevice;
use crate::pattern::{Level, ReqOp, Request};
use crate::scheme::{create, PdScheme, SchemeConfig, SchemeError, SchemeId, SecurityParam};
use crate::workload::{self, OpMix, RunStats, Workload};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub scheme: SchemeId,
    /// Requests in the public and hidden phases.
    pub public_phase_ops: usize,
    pub hidden_phase_ops: usize,
    pub public_ops: u64,
    pub hidden_ops: u64,
    pub capacity_errors: u64,
    pub public_ops_per_sec: Option<f64>,
    pub hidden_ops_per_sec: Option<f64>,
    pub baseline_public_ops_per_sec: Option<f64>,
    pub baseline_hidden_ops_per_sec: Option<f64>,
    /// Public throughput over baseline throughput; `None` when either side
    /// did no work.
    pub public_ratio: Option<f64>,
    pub hidden_ratio: Option<f64>,
    pub space_utilization: f64,
}

fn rate(ops: u64, time: Duration) -> Option<f64> {
    let secs = time.as_secs_f64();
    (ops > 0 && secs > 0.0).then(|| ops as f64 / secs)
}

/// Runs `requests` against the baseline device and returns its executed
/// operation count and elapsed time.
fn baseline(units: u64, payload_len: usize, requests: &[Request], seed: u64) -> Result<(u64, Duration), SchemeError> {
    let mut rng = SeededRng::new(seed);
    let key = Key::generate(&mut rng);
    let units = units.max(1);
    let mut dev = BlockDevice::randomized(units, payload_len + CIPHERTEXT_OVERHEAD, &mut rng)?;
    // Hidden and public addresses share one address space on the baseline.
    let phys = |r: &Request| match r.level() {
        Level::Pub => r.addr() % units,
        Level::Hid => (units - 1 - r.addr() % units) % units,
    };
    let start = Instant::now();
    let mut ops = 0;
    for r in requests {
        match r.op() {
            ReqOp::Write => {
                let ct = encrypt(&key, r.data().unwrap_or_default(), &mut rng);
                dev.write_block(phys(r), &ct)?;
            }
            ReqOp::Read => {
                let ct = dev.read_block(phys(r))?;
                let _ = decrypt(&key, &ct);
            }
            _ => continue,
        }
        ops += 1;
    }
    Ok((ops, start.elapsed()))
}

struct Phase {
    scheme: Box<dyn PdScheme>,
    requests: Vec<Request>,
    stats: RunStats,
    elapsed: Duration,
}

fn phase(id: SchemeId, config: &SchemeConfig, workload: &Workload) -> Result<Phase, SchemeError> {
    let mut scheme = create(id, config);
    let keys: KeyPair = scheme.setup(SecurityParam::default(), &mut SeededRng::new(workload.seed))?;
    scheme.take_trace();
    let requests =
        workload.generate(scheme.block_payload_len(), scheme.capacity(Level::Pub), scheme.capacity(Level::Hid));
    let start = Instant::now();
    let stats = workload::run(scheme.as_mut(), &keys, &requests, workload.gc_every)?;
    Ok(Phase { scheme, requests, stats, elapsed: start.elapsed() })
}

pub fn bench(id: SchemeId, config: &SchemeConfig, workload: &Workload) -> Result<BenchReport, SchemeError> {
    let mix = workload.mix;
    let public_mix = OpMix { hidden_write: 0.0, hidden_read: 0.0, ..mix };
    let public = match public_mix.validate() {
        Ok(()) => Some(phase(id, config, &Workload { mix: public_mix, ..workload.clone() })?),
        Err(_) => None,
    };
    let hidden = phase(id, config, workload)?;
    let units = hidden.scheme.geometry().units();
    let payload = hidden.scheme.block_payload_len();

    let (public_ops_per_sec, baseline_public_ops_per_sec) = match &public {
        Some(p) => {
            let (ops, time) = baseline(units, payload, &p.requests, workload.seed ^ 0xba5e)?;
            (rate(p.stats.public_ops, p.elapsed), rate(ops, time))
        }
        None => (None, None),
    };
    let hidden_requests: Vec<Request> =
        hidden.requests.iter().filter(|r| r.level() == Level::Hid).cloned().collect();
    let (ops, time) = baseline(units, payload, &hidden_requests, workload.seed ^ 0xba5e)?;
    let hidden_ops_per_sec = rate(hidden.stats.hidden_ops, hidden.elapsed);
    let baseline_hidden_ops_per_sec = rate(ops, time);

    let ratio = |x: Option<f64>, base: Option<f64>| x.zip(base).map(|(a, b)| a / b);
    Ok(BenchReport {
        scheme: id,
        public_phase_ops: public.as_ref().map_or(0, |p| p.requests.len()),
        hidden_phase_ops: hidden.requests.len(),
        public_ops: public.as_ref().map_or(0, |p| p.stats.public_ops),
        hidden_ops: hidden.stats.hidden_ops,
        capacity_errors: public.as_ref().map_or(0, |p| p.stats.capacity_errors) + hidden.stats.capacity_errors,
        public_ops_per_sec,
        hidden_ops_per_sec,
        baseline_public_ops_per_sec,
        baseline_hidden_ops_per_sec,
        public_ratio: ratio(public_ops_per_sec, baseline_public_ops_per_sec),
        hidden_ratio: ratio(hidden_ops_per_sec, baseline_hidden_ops_per_sec),
        space_utilization: hidden.scheme.space_utilization(),
    })
}
