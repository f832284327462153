//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line. Numeric arguments select a
//! subset, e.g. `cargo test --test acceptance -- 4 6`.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pdsim_core::crypto::SeededRng;
use pdsim_core::device::wonly;
use pdsim_core::game::{estimate_advantage, AdversaryKind, GameConfig, Orientation};
use pdsim_core::pattern::{ChallengePair, Level, Pattern, ReqOp, Request};
use pdsim_core::rules::{required_public_writes, validate_challenge};
use pdsim_core::scheme::{create, PdScheme, SchemeConfig, SchemeError, SchemeId, SecurityParam};
use pdsim_core::schemes::hive::{Hive, HiveParams};
use pdsim_core::schemes::wom::{page_capacity_bytes, Codeword, WomCode};
use pdsim_core::stats::{bin_counts, chi_square_uniform, two_sample_chi_square};
use pdsim_core::woram::{check_def2, oram_setup, AdapterParams, DataRequest, Def2Options};
use pdsim_core::workload::Workload;
use rand::seq::SliceRandom;
use rand::Rng;

type Check = fn() -> Result<String, String>;

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    if t <= limit {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
    }
}

fn battery(scheme: SchemeId, orientation: Orientation, rounds: usize, trials: usize, seed: u64) -> Result<String, String> {
    let mut cfg = GameConfig::new(scheme);
    cfg.orientation = orientation;
    cfg.rounds = rounds;
    cfg.trials = trials;
    cfg.seed = seed;
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in AdversaryKind::battery() {
        let out = estimate_advantage(&cfg, kind).map_err(|e| e.to_string())?;
        ok &= out.invalid == 0 && out.advantage <= 0.05;
        parts.push(format!("{}={:.3}", kind, out.advantage));
    }
    let line = format!("{} {}: {}", scheme.as_str(), orientation, parts.join(" "));
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c1_multi_snapshot_break() -> Result<String, String> {
    let start = Instant::now();
    let mut cfg = GameConfig::new(SchemeId::HiddenVolume);
    cfg.rounds = 2;
    cfg.trials = 200;
    cfg.seed = 1;
    let out = estimate_advantage(&cfg, AdversaryKind::FreeSpaceDiff).map_err(|e| e.to_string())?;
    within(Duration::from_secs(30), start)?;
    let line = format!("advantage {:.3} over {} trials (wins {})", out.advantage, out.trials, out.wins);
    if out.advantage >= 0.45 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c2_single_snapshot_safety() -> Result<String, String> {
    let start = Instant::now();
    let line = battery(SchemeId::HiddenVolume, Orientation::Device, 1, 1000, 2)?;
    within(Duration::from_secs(60), start)?;
    Ok(line)
}

fn c3_trace_security() -> Result<String, String> {
    let mut lines = Vec::new();
    for scheme in [SchemeId::Hive, SchemeId::PdDm] {
        let start = Instant::now();
        lines.push(battery(scheme, Orientation::Trace, 8, 1000, 3)?);
        within(Duration::from_secs(120), start)?;
    }
    Ok(lines.join("; "))
}

/// A random rule-valid pd_dm challenge: `⌈φk⌉..⌈φk⌉+4` public writes,
/// `1..=5` hidden writes, empty `Pat²_pub`.
fn pd_dm_pair(rng: &mut SeededRng, phi: f64, payload: usize, cap_pub: u64, cap_hid: u64) -> ChallengePair {
    let k = rng.random_range(1..=5usize);
    let m = required_public_writes(phi, k) + rng.random_range(0..=4usize);
    let pub1: Pattern =
        (0..m).map(|_| Request::write(Level::Pub, rng.random_range(0..cap_pub), rng.bytes(payload))).collect();
    let hid: Pattern =
        (0..k).map(|_| Request::write(Level::Hid, rng.random_range(0..cap_hid), rng.bytes(payload))).collect();
    ChallengePair::new(pub1, Pattern::new(), hid)
}

fn write_address_bytes(scheme: &mut dyn PdScheme) -> Vec<u8> {
    wonly(&scheme.take_trace()).write_locations().iter().flat_map(|l| l.to_le_bytes()).collect()
}

fn c4_canonical_form() -> Result<String, String> {
    let config = SchemeConfig::default();
    let probe = create(SchemeId::PdDm, &config);
    let (payload, cap_pub, cap_hid) =
        (probe.block_payload_len(), probe.capacity(Level::Pub), probe.capacity(Level::Hid));
    let rules = probe.rules();
    let mut rng = SeededRng::new(4);
    for i in 0..100u64 {
        let pair = pd_dm_pair(&mut rng, config.pd_dm.phi, payload, cap_pub, cap_hid);
        validate_challenge(&rules, &pair).map_err(|e| format!("pair {i}: {e}"))?;
        let p0 = pair.pat0();
        let p1 = pair.pat1();
        let pub_writes = |p: &Pattern| p.iter().filter(|r| r.is_write() && r.level() == Level::Pub).count();
        if pub_writes(&p0) != pub_writes(&p1) {
            return Err(format!("pair {i}: public write counts differ"));
        }
        let mut traces = Vec::new();
        for pat in [p0, p1] {
            let mut s = create(SchemeId::PdDm, &config);
            let keys = s.setup(SecurityParam::default(), &mut SeededRng::new(1000 + i)).map_err(|e| e.to_string())?;
            s.take_trace();
            s.oper(&pat, &keys).map_err(|e| format!("pair {i}: {e}"))?;
            traces.push(write_address_bytes(s.as_mut()));
        }
        if traces[0] != traces[1] {
            return Err(format!("pair {i}: write-address traces differ"));
        }
    }
    Ok("100 pairs, write-address traces identical for b=0 and b=1".into())
}

/// Physical data-region write locations of a hive instance, and the number
/// of steps taken, after running `pattern` one request at a time.
fn hive_locations(seed: u64, requests: &[Request]) -> Result<(Vec<u64>, u64, u64, u64), String> {
    let config = SchemeConfig::default();
    let mut hive = Hive::new(config.block, HiveParams::default());
    let keys = hive.setup(SecurityParam::default(), &mut SeededRng::new(seed)).map_err(|e| e.to_string())?;
    hive.take_trace();
    let (start, blocks) = (hive.data_start(), hive.data_blocks());
    let mut locs = Vec::new();
    for r in requests {
        let p: Pattern = std::iter::once(r.clone()).collect();
        hive.oper(&p, &keys).map_err(|e| e.to_string())?;
        locs.extend(hive.take_trace().write_locations().into_iter().filter(|&l| l >= start).map(|l| l - start));
    }
    Ok((locs, hive.steps(), start, blocks))
}

fn c5_woram_uniformity() -> Result<String, String> {
    let mut probe = Hive::new(SchemeConfig::default().block, HiveParams::default());
    probe.setup(SecurityParam::default(), &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    let payload = probe.block_payload_len();
    let (cap_pub, cap_hid) = (probe.capacity(Level::Pub), probe.capacity(Level::Hid));
    let mut rng = SeededRng::new(5);
    // Uniform random public writes with hidden writes mixed in.
    let mut spread = Vec::new();
    for _ in 0..10_000 {
        spread.push(Request::write(Level::Pub, rng.random_range(0..cap_pub), rng.bytes(payload)));
        if rng.random_bool(0.3) {
            spread.push(Request::write(Level::Hid, rng.random_range(0..cap_hid), rng.bytes(payload)));
        }
    }
    // One hot public address, no hidden data.
    let hot: Vec<Request> = (0..10_000).map(|_| Request::write(Level::Pub, 0, rng.bytes(payload))).collect();
    let (a, steps, _, blocks) = hive_locations(50, &spread)?;
    let (b, steps_b, _, _) = hive_locations(51, &hot)?;
    if steps != 10_000 || steps_b != 10_000 {
        return Err(format!("expected 10000 steps, got {steps} and {steps_b}"));
    }
    let (_, p_uniform) = chi_square_uniform(&bin_counts(a.iter().copied(), blocks, blocks as usize));
    let p_two = two_sample_chi_square(
        &bin_counts(a.iter().copied(), blocks, blocks as usize),
        &bin_counts(b.iter().copied(), blocks, blocks as usize),
    );
    let line = format!("uniformity p={p_uniform:.4}, two-sample p={p_two:.4} over {} and {} writes", a.len(), b.len());
    if a.len() != b.len() {
        return Err(format!("{line}; write counts differ"));
    }
    if p_uniform > 0.01 && p_two > 0.01 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c6_wom_oracle() -> Result<String, String> {
    // Oracle tables, written out independently of the implementation.
    let gen1 = ["000", "100", "010", "001"];
    let gen2 = ["111", "011", "101", "110"];
    let parse = |s: &str| {
        let b: Vec<u8> = s.bytes().map(|c| c - b'0').collect();
        Codeword([b[0], b[1], b[2]])
    };
    let code = WomCode::standard();
    let mut cases = 0;
    for s in 0..4u8 {
        if code.encode(s, 1) != Ok(parse(gen1[s as usize])) || code.encode(s, 2) != Ok(parse(gen2[s as usize])) {
            return Err(format!("symbol {s} encodes differently from the oracle table"));
        }
        for t in 0..4u8 {
            let from = parse(gen1[s as usize]);
            let expect = if s == t { from } else { parse(gen2[t as usize]) };
            let got = code.convert(from, t).map_err(|e| e.to_string())?;
            if got != expect {
                return Err(format!("{s}->{t}: got {got}, expected {expect}"));
            }
            if !(0..3).all(|i| got.0[i] >= from.0[i]) {
                return Err(format!("{s}->{t}: {from} -> {got} clears a cell"));
            }
            if code.decode(got, 2) != Ok(t) || code.decode(from, 1) != Ok(s) {
                return Err(format!("{s}->{t}: generation-aware decode failed"));
            }
            cases += 1;
        }
    }
    // 2 bits per 3 cells: 1536 cells hold 512 symbols, 1024 bits.
    let rate = WomCode::rate();
    if rate != 2.0 / 3.0 || page_capacity_bytes(1536) * 8 != 1024 || code.encode_bytes(&[0u8; 4]).len() != 48 {
        return Err(format!("rate {rate} is not 2 bits per 3 cells"));
    }
    Ok(format!("{cases} conversions checked, rate {rate:.4}"))
}

fn random_sequence(rng: &mut SeededRng, writes: usize, reads: usize, cap: u64, payload: usize) -> Vec<DataRequest> {
    let mut seq: Vec<DataRequest> = Vec::with_capacity(writes + reads);
    for _ in 0..writes {
        seq.push(DataRequest::Write { addr: rng.random_range(0..cap), data: rng.bytes(payload) });
    }
    for _ in 0..reads {
        seq.push(DataRequest::Read { addr: rng.random_range(0..cap) });
    }
    seq.shuffle(rng);
    seq
}

fn c7_def2() -> Result<String, String> {
    let start = Instant::now();
    let config = SchemeConfig::default();
    let mut rng = SeededRng::new(7);
    let mut summary = Vec::new();
    for backend in [SchemeId::Hive, SchemeId::PdDm] {
        let adapter = oram_setup(backend, &config, AdapterParams::default(), SecurityParam::default(), &mut SeededRng::new(0))
            .map_err(|e| e.to_string())?;
        let (cap, payload) = (adapter.capacity(), adapter.block_len());
        let mut min_p = 1.0f64;
        for i in 0..50u64 {
            let w = rng.random_range(1..=30usize);
            let (r0, r1) = (rng.random_range(0..=20usize), rng.random_range(0..=20usize));
            let y0 = random_sequence(&mut rng, w, r0, cap, payload);
            let y1 = random_sequence(&mut rng, w, r1, cap, payload);
            let opts = Def2Options { seed: 700 + i, ..Def2Options::default() };
            let rep = check_def2(backend, &config, &y0, &y1, &opts).map_err(|e| e.to_string())?;
            if !rep.pass {
                return Err(format!("{} pair {i}: {rep:?}", backend.as_str()));
            }
            min_p = min_p.min(rep.address_p.min(rep.byte_p));
        }
        summary.push(format!("{} 50/50 (min p {:.4})", backend.as_str(), min_p));
    }
    within(Duration::from_secs(60), start)?;
    Ok(summary.join(", "))
}

fn c8_space_utilization() -> Result<String, String> {
    let config = SchemeConfig::default();
    let util = |id| {
        let mut s = create(id, &config);
        s.setup(SecurityParam::default(), &mut SeededRng::new(8)).map(|_| s.space_utilization())
    };
    let hive = util(SchemeId::Hive).map_err(|e| e.to_string())?;
    let pd_dm = util(SchemeId::PdDm).map_err(|e| e.to_string())?;
    let pearl = util(SchemeId::Pearl).map_err(|e| e.to_string())?;
    // Geometry oracle: whole 3-cell symbols per page, 2 bits each, whole
    // bytes only.
    let cells = config.flash.unit_len();
    let bits = (cells / 3) * 2 / 8 * 8;
    let oracle = bits as f64 / cells as f64;
    let line = format!("hive {hive}, pd_dm {pd_dm}, pearl {pearl} (oracle {oracle})");
    if hive == 0.5 && (pd_dm - 0.5).abs() <= 0.02 && pearl == oracle {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Runs a random workload against `id` and compares every read with a
/// reference map. Returns (mismatches, capacity errors, reads checked).
fn durability(id: SchemeId, ops: usize, seed: u64) -> Result<(u64, u64, u64), String> {
    let config = SchemeConfig::default();
    let mut s = create(id, &config);
    let keys = s.setup(SecurityParam::default(), &mut SeededRng::new(seed)).map_err(|e| e.to_string())?;
    let w = Workload { ops, seed, ..Workload::default() };
    let reqs = w.generate(s.block_payload_len(), s.capacity(Level::Pub), s.capacity(Level::Hid));
    let mut model: HashMap<(Level, u64), Vec<u8>> = HashMap::new();
    let (mut mismatches, mut capacity, mut reads) = (0, 0, 0);
    let gc_every = (id == SchemeId::Pearl).then_some(25);
    for (i, r) in reqs.iter().enumerate() {
        if gc_every.is_some_and(|e| i > 0 && i % e == 0) {
            s.collect_garbage(&keys).map_err(|e| e.to_string())?;
        }
        let p: Pattern = std::iter::once(r.clone()).collect();
        let key = (r.level(), r.addr());
        match (r.op(), s.oper(&p, &keys)) {
            (ReqOp::Write, Ok(_)) => {
                model.insert(key, r.data().unwrap().to_vec());
            }
            (ReqOp::Read, Ok(out)) => {
                reads += 1;
                if model.get(&key) != out.first() {
                    mismatches += 1;
                }
            }
            (ReqOp::Read, Err(SchemeError::NotFound { .. })) if !model.contains_key(&key) => {}
            (_, Err(e)) if e.is_capacity() => capacity += 1,
            (_, Err(e)) => return Err(format!("{} request {i}: {e}", id.as_str())),
            _ => {}
        }
    }
    for ((level, addr), data) in &model {
        let p: Pattern = std::iter::once(Request::read(*level, *addr)).collect();
        reads += 1;
        match s.oper(&p, &keys) {
            Ok(out) if out.first() == Some(data) => {}
            _ => mismatches += 1,
        }
    }
    Ok((mismatches, capacity, reads))
}

fn c9_durability() -> Result<String, String> {
    let mut parts = Vec::new();
    let mut ok = true;
    for id in SchemeId::ALL {
        let (mismatches, capacity, reads) = durability(id, 10_000, 9)?;
        ok &= mismatches == 0;
        parts.push(format!("{} {mismatches} mismatches/{reads} reads ({capacity} capacity errors)", id.as_str()));
    }
    let line = parts.join(", ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn c10_harness_sanity() -> Result<String, String> {
    let mut cfg = GameConfig::new(SchemeId::PlaintextMarker);
    cfg.trials = 1000;
    cfg.seed = 10;
    let out = estimate_advantage(&cfg, AdversaryKind::Marker).map_err(|e| e.to_string())?;
    let line = format!("marker adversary advantage {:.3}", out.advantage);
    if out.advantage >= 0.49 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("multi-snapshot break of hidden_volume", c1_multi_snapshot_break),
        ("single-snapshot safety of hidden_volume", c2_single_snapshot_safety),
        ("trace security of hive and pd_dm", c3_trace_security),
        ("pd_dm canonical form", c4_canonical_form),
        ("hive write-location uniformity", c5_woram_uniformity),
        ("WOM code oracle", c6_wom_oracle),
        ("wORAM adapter conformance", c7_def2),
        ("space utilization", c8_space_utilization),
        ("durability against a reference map", c9_durability),
        ("harness detects a planted leak", c10_harness_sanity),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
