//! Write-only ORAM built from a trace-oriented deniable scheme.
//!
//! Logical accesses go to the hidden volume. Each write is padded to a
//! hidden pattern of fixed length `n` and executed next to a fixed public
//! cover pattern that satisfies the scheme's rules, so every write access
//! produces the same kind of write-only trace. Reads run next to a single
//! public dummy and never write.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, SeededRng};
use crate::device::{wonly, OpTrace};
use crate::pattern::{ChallengePair, Level, Pattern, Request};
use crate::rules::{required_public_writes, validate_challenge, Rule};
use crate::scheme::{create, PdScheme, SchemeConfig, SchemeError, SchemeId, SecurityParam};
use crate::stats::{bin_counts, byte_histogram, two_sample_chi_square};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WoramError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum DataRequest {
    Read { addr: u64 },
    Write { addr: u64, data: Vec<u8> },
}

impl DataRequest {
    pub fn addr(&self) -> u64 {
        match self {
            DataRequest::Read { addr } | DataRequest::Write { addr, .. } => *addr,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, DataRequest::Write { .. })
    }

    fn to_hidden(&self) -> Request {
        match self {
            DataRequest::Read { addr } => Request::read(Level::Hid, *addr),
            DataRequest::Write { addr, data } => Request::write(Level::Hid, *addr, data.clone()),
        }
    }
}

/// The request first, then `n − 1` hidden dummies.
pub fn hidden_gen(n: usize, req: &DataRequest) -> Result<Pattern, WoramError> {
    if n == 0 {
        return Err(WoramError::Config("hidden pattern length must be at least 1".into()));
    }
    let mut p = Pattern::new();
    p.push(req.to_hidden());
    for _ in 1..n {
        p.push(Request::dummy(Level::Hid));
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterParams {
    /// Length of every hidden pattern.
    pub n: usize,
}

impl Default for AdapterParams {
    fn default() -> Self {
        AdapterParams { n: 1 }
    }
}

/// Result of one access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub trace: OpTrace,
    /// Data returned by a read; `None` for writes and never-written blocks.
    pub data: Option<Vec<u8>>,
}

pub struct WoramAdapter {
    backend: SchemeId,
    params: AdapterParams,
    scheme: Box<dyn PdScheme>,
    keys: KeyPair,
    rng: SeededRng,
    scratch: u64,
    cover_writes: usize,
}

impl std::fmt::Debug for WoramAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WoramAdapter")
            .field("backend", &self.backend)
            .field("params", &self.params)
            .field("scratch", &self.scratch)
            .field("cover_writes", &self.cover_writes)
            .finish()
    }
}

/// Sets up the wrapped scheme. Only trace-oriented schemes qualify.
pub fn oram_setup(
    backend: SchemeId,
    config: &SchemeConfig,
    params: AdapterParams,
    lambda: SecurityParam,
    rng: &mut SeededRng,
) -> Result<WoramAdapter, WoramError> {
    if !backend.is_trace_oriented() {
        return Err(WoramError::Config(format!("{} is not trace-oriented", backend.as_str())));
    }
    if backend == SchemeId::HiveB {
        // Every request steps the ORAM in this variant, reads included.
        return Err(WoramError::Config("hive_b has no write-free read path".into()));
    }
    if params.n == 0 {
        return Err(WoramError::Config("hidden pattern length must be at least 1".into()));
    }
    let mut scheme = create(backend, config);
    let keys = scheme.setup(lambda, rng)?;
    scheme.take_trace();
    let cap_pub = scheme.capacity(Level::Pub);
    if cap_pub == 0 {
        return Err(WoramError::Config("public volume has no room for the cover pattern".into()));
    }
    let rules = scheme.rules();
    let cover_writes = match rules.rule1 {
        Rule::MinPublicWrites { phi } => required_public_writes(phi, params.n),
        Rule::SameLengthAsHidden | Rule::Unrestricted => params.n,
        other => return Err(WoramError::Config(format!("no universal public pattern for rule {other:?}"))),
    };
    if rules.rule2 != Rule::Empty && rules.rule2 != Rule::SameLengthAsHidden {
        return Err(WoramError::Config(format!("no universal public pattern for rule {:?}", rules.rule2)));
    }
    let adapter = WoramAdapter {
        backend,
        params,
        scheme,
        keys,
        rng: rng.fork(0x0a4a),
        scratch: cap_pub - 1,
        cover_writes,
    };
    // The universal pattern has to be valid against any hidden pattern of
    // length n.
    let probe = hidden_gen(params.n, &DataRequest::Read { addr: 0 })?;
    let pair = ChallengePair::new(adapter.universal_pattern_shape(), Pattern::new(), probe);
    validate_challenge(&rules, &pair).map_err(|e| WoramError::Config(e.to_string()))?;
    Ok(adapter)
}

impl WoramAdapter {
    pub fn backend(&self) -> SchemeId {
        self.backend
    }

    pub fn params(&self) -> AdapterParams {
        self.params
    }

    /// Hidden blocks available to the store.
    pub fn capacity(&self) -> u64 {
        self.scheme.capacity(Level::Hid)
    }

    pub fn block_len(&self) -> usize {
        self.scheme.block_payload_len()
    }

    /// Public address every cover write goes to.
    pub fn scratch_addr(&self) -> u64 {
        self.scratch
    }

    /// Number of public writes in the universal cover pattern.
    pub fn cover_writes(&self) -> usize {
        self.cover_writes
    }

    pub fn scheme(&self) -> &dyn PdScheme {
        self.scheme.as_ref()
    }

    fn universal_pattern_shape(&self) -> Pattern {
        (0..self.cover_writes).map(|_| Request::write(Level::Pub, self.scratch, Vec::new())).collect()
    }

    /// Cover writes of fresh random data to the scratch address.
    fn universal_pattern(&mut self) -> Pattern {
        let len = self.scheme.block_payload_len();
        (0..self.cover_writes).map(|_| Request::write(Level::Pub, self.scratch, self.rng.bytes(len))).collect()
    }

    pub fn access(&mut self, req: &DataRequest) -> Result<Access, WoramError> {
        let hid = hidden_gen(self.params.n, req)?;
        let pattern = match req {
            DataRequest::Read { .. } => {
                let mut p = Pattern::new();
                p.push(Request::dummy(Level::Pub));
                p.concat(&hid)
            }
            DataRequest::Write { .. } => self.universal_pattern().concat(&hid),
        };
        let result = self.scheme.oper(&pattern, &self.keys);
        let trace = self.scheme.take_trace();
        let data = match result {
            Ok(mut reads) => reads.pop(),
            Err(SchemeError::NotFound { .. }) if !req.is_write() => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Access { trace, data })
    }
}

/// Thresholds for [`check_def2`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Def2Options {
    pub seed: u64,
    /// Significance level of each two-sample test.
    pub alpha: f64,
    pub address_bins: usize,
    pub params: AdapterParams,
}

impl Default for Def2Options {
    fn default() -> Self {
        Def2Options { seed: 0, alpha: 1e-4, address_bins: 32, params: AdapterParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Def2Report {
    pub backend: SchemeId,
    pub writes: usize,
    pub wonly_len: [usize; 2],
    pub address_p: f64,
    pub byte_p: f64,
    /// Every read access produced an empty write-only trace.
    pub reads_write_nothing: bool,
    pub pass: bool,
}

fn run_sequence(
    backend: SchemeId,
    config: &SchemeConfig,
    opts: &Def2Options,
    seq: &[DataRequest],
) -> Result<(OpTrace, bool), WoramError> {
    let mut rng = SeededRng::new(opts.seed);
    let mut adapter = oram_setup(backend, config, opts.params, SecurityParam::default(), &mut rng)?;
    let mut all = OpTrace::new();
    let mut quiet_reads = true;
    for r in seq {
        let w = wonly(&adapter.access(r)?.trace);
        if !r.is_write() && !w.is_empty() {
            quiet_reads = false;
        }
        all.extend(w);
    }
    Ok((all, quiet_reads))
}

/// Runs two request sequences with the same number of writes on fresh
/// adapters with the same seed and compares their write-only traces.
pub fn check_def2(
    backend: SchemeId,
    config: &SchemeConfig,
    y0: &[DataRequest],
    y1: &[DataRequest],
    opts: &Def2Options,
) -> Result<Def2Report, WoramError> {
    let w0 = y0.iter().filter(|r| r.is_write()).count();
    let w1 = y1.iter().filter(|r| r.is_write()).count();
    if w0 != w1 {
        return Err(WoramError::Precondition(format!("write counts differ: {w0} vs {w1}")));
    }
    let (t0, q0) = run_sequence(backend, config, opts, y0)?;
    let (t1, q1) = run_sequence(backend, config, opts, y1)?;
    let units = config_units(backend, config);
    let bins = opts.address_bins.clamp(1, units.max(1) as usize);
    let address_p = two_sample_chi_square(
        &bin_counts(t0.write_locations(), units, bins),
        &bin_counts(t1.write_locations(), units, bins),
    );
    let bytes = |t: &OpTrace| -> Vec<u8> { t.iter().filter_map(|e| e.data.as_deref()).flatten().copied().collect() };
    let byte_p = two_sample_chi_square(&byte_histogram(&bytes(&t0)), &byte_histogram(&bytes(&t1)));
    let wonly_len = [t0.len(), t1.len()];
    let reads_write_nothing = q0 && q1;
    let pass = wonly_len[0] == wonly_len[1] && address_p > opts.alpha && byte_p > opts.alpha && reads_write_nothing;
    Ok(Def2Report { backend, writes: w0, wonly_len, address_p, byte_p, reads_write_nothing, pass })
}

fn config_units(backend: SchemeId, config: &SchemeConfig) -> u64 {
    create(backend, config).geometry().units()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Geometry;

    fn config() -> SchemeConfig {
        SchemeConfig { block: Geometry::Block { num_blocks: 128, block_size: 512 }, ..SchemeConfig::default() }
    }

    fn adapter(backend: SchemeId, seed: u64) -> WoramAdapter {
        oram_setup(backend, &config(), AdapterParams::default(), SecurityParam::default(), &mut SeededRng::new(seed))
            .unwrap()
    }

    #[test]
    fn hidden_gen_pads_with_dummies() {
        let req = DataRequest::Write { addr: 3, data: vec![1; 4] };
        let p = hidden_gen(4, &req).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.requests()[0], Request::write(Level::Hid, 3, vec![1; 4]));
        assert!(p.requests()[1..].iter().all(|r| *r == Request::dummy(Level::Hid)));
        assert_eq!(hidden_gen(1, &req).unwrap().len(), 1);
        assert!(matches!(hidden_gen(0, &req), Err(WoramError::Config(_))));
    }

    #[test]
    fn only_trace_oriented_backends() {
        for id in SchemeId::ALL {
            let r = oram_setup(id, &config(), AdapterParams::default(), SecurityParam::default(), &mut SeededRng::new(0));
            assert_eq!(r.is_ok(), matches!(id, SchemeId::Hive | SchemeId::PdDm), "{id:?}");
        }
        let r = oram_setup(SchemeId::HiddenVolume, &config(), AdapterParams::default(), SecurityParam::default(), &mut SeededRng::new(0));
        assert!(matches!(r, Err(WoramError::Config(_))));
    }

    #[test]
    fn roundtrip_and_quiet_reads() {
        for id in [SchemeId::Hive, SchemeId::PdDm] {
            let mut a = adapter(id, 5);
            let len = a.block_len();
            let mut model = std::collections::HashMap::new();
            let mut rng = SeededRng::new(6);
            for i in 0..300u64 {
                let addr = i * 7 % a.capacity();
                if i % 3 == 0 {
                    let r = a.access(&DataRequest::Read { addr }).unwrap();
                    assert!(wonly(&r.trace).is_empty());
                    assert_eq!(r.data.as_ref(), model.get(&addr), "{id:?} read {addr}");
                } else {
                    let data = rng.bytes(len);
                    a.access(&DataRequest::Write { addr, data: data.clone() }).unwrap();
                    model.insert(addr, data);
                }
            }
        }
    }

    #[test]
    fn write_trace_length_is_constant() {
        for id in [SchemeId::Hive, SchemeId::PdDm] {
            let mut a = adapter(id, 8);
            let len = a.block_len();
            let mut lens = std::collections::BTreeSet::new();
            for i in 0..400u64 {
                let t = a.access(&DataRequest::Write { addr: i % a.capacity(), data: vec![i as u8; len] }).unwrap();
                lens.insert(wonly(&t.trace).len());
            }
            assert_eq!(lens.len(), 1, "{id:?}: {lens:?}");
        }
    }

    #[test]
    fn def2_precondition_and_identity() {
        let c = config();
        let len = adapter(SchemeId::PdDm, 0).block_len();
        let y0: Vec<_> = (0..5).map(|a| DataRequest::Write { addr: a, data: vec![0; len] }).collect();
        let y1: Vec<_> = y0.iter().cloned().chain((0..7).map(|a| DataRequest::Read { addr: a })).collect();
        let opts = Def2Options::default();
        let rep = check_def2(SchemeId::PdDm, &c, &y0, &y1, &opts).unwrap();
        assert_eq!(rep.wonly_len[0], rep.wonly_len[1]);
        assert!(rep.pass);
        let rep = check_def2(SchemeId::PdDm, &c, &y0, &y0, &opts).unwrap();
        assert_eq!(rep.address_p, 1.0);
        assert_eq!(rep.byte_p, 1.0);
        assert!(matches!(
            check_def2(SchemeId::PdDm, &c, &y0[..3], &y0[..4], &opts),
            Err(WoramError::Precondition(_))
        ));
    }
}
