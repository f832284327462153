use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pdsim_core::bench::{bench, BenchReport};
use pdsim_core::catalog::{matrix_rows, MATRIX_COLUMNS};
use pdsim_core::crypto::sha256_hex;
use pdsim_core::device::export::{write_snapshot, write_trace, SnapshotMeta};
use pdsim_core::device::{wonly, OpKind};
use pdsim_core::game::{GameError, TrialRecord};
use pdsim_core::woram::{AdapterParams, Def2Options, Def2Report, WoramError};
use pdsim_core::workload::{run_traced, RunStats};
use pdsim_core::{
    check_def2, create, estimate_advantage, oram_setup, AdversaryKind, DataRequest, GameConfig, GameOutcome, Level,
    OpMix, OpTrace, Orientation, SchemeConfig, SchemeId, SecurityParam, SeededRng, Workload,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::args::{BenchArgs, DumpArgs, Format, GameArgs, MatrixArgs, WoramArgs, BATTERY};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, ids or config values.
    Usage(String),
    /// The run itself failed.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

fn usage(msg: impl fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn failed(msg: impl fmt::Display) -> CliError {
    CliError::Failed(msg.to_string())
}

fn io_failed(path: &Path, e: io::Error) -> CliError {
    failed(format!("{}: {e}", path.display()))
}

/// Wall-clock data, kept apart from everything else so that reruns of the
/// same spec differ only here.
#[derive(Debug, Serialize)]
struct Timing {
    elapsed_ms: u128,
    finished_unix_ms: u128,
}

impl Timing {
    fn since(start: Instant) -> Self {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        Timing { elapsed_ms: start.elapsed().as_millis(), finished_unix_ms: now }
    }
}

#[derive(Debug, Serialize)]
struct Summary<S, R> {
    command: &'static str,
    spec: S,
    results: R,
    pass: bool,
    timing: Timing,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("summary serializes") + "\n"
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_failed(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_failed(path, e))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_failed(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| failed(format!("{}: {e}", path.display())))?;
        out.write_all(b"\n").map_err(|e| io_failed(path, e))?;
    }
    out.flush().map_err(|e| io_failed(path, e))
}

/// Prints the summary and, with an output directory, saves it there too.
fn emit_summary<S: Serialize, R: Serialize>(summary: &Summary<S, R>, out: Option<&Path>) -> Result<(), CliError> {
    let text = to_json(summary);
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("summary.json"), text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn workload(
    ops: Option<usize>,
    seed: Option<u64>,
    mix: Option<Vec<f64>>,
    gc_every: Option<usize>,
    address_space: Option<u64>,
) -> Result<Workload, CliError> {
    let mut w = Workload::default();
    w.ops = ops.unwrap_or(w.ops);
    w.seed = seed.unwrap_or(w.seed);
    if let Some(m) = mix {
        let [public_write, hidden_write, public_read, hidden_read] =
            m.try_into().map_err(|m: Vec<f64>| usage(format!("mix needs 4 weights, got {}", m.len())))?;
        w.mix = OpMix { public_write, hidden_write, public_read, hidden_read };
    }
    w.mix.validate().map_err(usage)?;
    w.gc_every = gc_every.filter(|&g| g > 0);
    w.address_space = address_space;
    Ok(w)
}

#[derive(Debug, Serialize)]
struct GameSpec {
    scheme: SchemeId,
    adversary: String,
    orientation: Orientation,
    rounds: usize,
    trials: usize,
    seed: u64,
    epsilon: f64,
    expect_break: Option<f64>,
    hidden_writes: usize,
    schemes: SchemeConfig,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    adversary: &'a str,
    #[serde(flatten)]
    record: &'a TrialRecord,
}

pub fn game(args: GameArgs, schemes: SchemeConfig) -> Result<bool, CliError> {
    let scheme = args.scheme.ok_or_else(|| usage("game needs --scheme"))?;
    let adversary = args.adversary.unwrap_or_else(|| BATTERY.to_string());
    let kinds = if adversary == BATTERY {
        AdversaryKind::battery().to_vec()
    } else {
        vec![adversary.parse::<AdversaryKind>().map_err(usage)?]
    };
    let mut config = GameConfig::new(scheme);
    config.orientation = args.orient.unwrap_or(config.orientation);
    config.rounds = args.rounds.unwrap_or(config.rounds);
    config.trials = args.trials.unwrap_or(config.trials);
    config.seed = args.seed.unwrap_or(config.seed);
    config.epsilon = args.epsilon.unwrap_or(config.epsilon);
    config.hidden_writes = args.hidden_writes.unwrap_or(config.hidden_writes);
    config.schemes = schemes;
    config.validate().map_err(usage)?;
    if let Some(floor) = args.expect_break {
        if !(0.0..=0.5).contains(&floor) {
            return Err(usage(format!("expect-break floor must lie in [0, 0.5], got {floor}")));
        }
    }
    let spec = GameSpec {
        scheme,
        adversary,
        orientation: config.orientation,
        rounds: config.rounds,
        trials: config.trials,
        seed: config.seed,
        epsilon: config.epsilon,
        expect_break: args.expect_break,
        hidden_writes: config.hidden_writes,
        schemes: config.schemes.clone(),
    };

    let start = Instant::now();
    let mut outcomes: Vec<GameOutcome> = Vec::new();
    for kind in kinds {
        let outcome = estimate_advantage(&config, kind).map_err(|e| match e {
            GameError::Config(m) => usage(m),
            other => failed(other),
        })?;
        eprintln!(
            "{} / {}: advantage {:.4} ± {:.4} over {} trials ({} invalid)",
            scheme, outcome.adversary, outcome.advantage, outcome.ci95, outcome.trials, outcome.invalid
        );
        outcomes.push(outcome);
    }
    let max_advantage = outcomes.iter().map(|o| o.advantage).fold(0.0, f64::max);
    let pass = match args.expect_break {
        Some(floor) => max_advantage >= floor,
        None => outcomes.iter().all(|o| o.pass),
    };
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let lines = outcomes
            .iter()
            .flat_map(|o| o.records.iter().map(move |record| RecordLine { adversary: &o.adversary, record }));
        write_lines(&dir.join("records.jsonl"), lines)?;
    }
    let summary = Summary { command: "game", spec, results: outcomes, pass, timing: Timing::since(start) };
    emit_summary(&summary, args.out.as_deref())?;
    Ok(pass)
}

#[derive(Debug, Serialize)]
struct BenchSpec {
    schemes: Vec<SchemeId>,
    workload: Workload,
    config: SchemeConfig,
}

fn ratio_text(x: Option<f64>) -> String {
    x.map_or("n/a".to_string(), |v| format!("{v:.3}"))
}

fn rate_text(x: Option<f64>) -> String {
    x.map_or("n/a".to_string(), |v| format!("{v:.0}"))
}

/// Renders rows as left-aligned columns separated by two spaces.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> =
            cells.iter().zip(&widths).map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(failed)?;
    for row in rows {
        w.write_record(row).map_err(failed)?;
    }
    let bytes = w.into_inner().map_err(|e| failed(e.to_string()))?;
    String::from_utf8(bytes).map_err(failed)
}

const BENCH_COLUMNS: [&str; 12] = [
    "scheme",
    "public_phase_ops",
    "hidden_phase_ops",
    "public_ops_per_sec",
    "hidden_ops_per_sec",
    "baseline_public_ops_per_sec",
    "baseline_hidden_ops_per_sec",
    "public_ratio",
    "hidden_ratio",
    "space_utilization",
    "capacity_errors",
    "gc_every",
];

fn bench_rows(reports: &[BenchReport], gc_every: Option<usize>) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            vec![
                r.scheme.to_string(),
                r.public_phase_ops.to_string(),
                r.hidden_phase_ops.to_string(),
                rate_text(r.public_ops_per_sec),
                rate_text(r.hidden_ops_per_sec),
                rate_text(r.baseline_public_ops_per_sec),
                rate_text(r.baseline_hidden_ops_per_sec),
                ratio_text(r.public_ratio),
                ratio_text(r.hidden_ratio),
                format!("{:.4}", r.space_utilization),
                r.capacity_errors.to_string(),
                gc_every.map_or("-".to_string(), |g| g.to_string()),
            ]
        })
        .collect()
}

pub fn bench_cmd(args: BenchArgs, schemes: SchemeConfig) -> Result<bool, CliError> {
    let ids = if args.scheme.is_empty() { SchemeId::ALL.to_vec() } else { args.scheme.clone() };
    let w = workload(args.ops, args.seed, args.mix, args.gc_every, args.address_space)?;
    let start = Instant::now();
    let mut reports = Vec::new();
    for &id in &ids {
        reports.push(bench(id, &schemes, &w).map_err(|e| failed(format!("{id}: {e}")))?);
    }
    let rows = bench_rows(&reports, w.gc_every);
    let spec = BenchSpec { schemes: ids, workload: w, config: schemes };
    let summary = Summary { command: "bench", spec, results: reports, pass: true, timing: Timing::since(start) };
    match args.format.unwrap_or(Format::Json) {
        Format::Json => emit_summary(&summary, args.out.as_deref())?,
        other => {
            if let Some(dir) = &args.out {
                create_dir(dir)?;
                write_file(&dir.join("summary.json"), to_json(&summary).as_bytes())?;
            }
            let text = if other == Format::Csv { csv_text(&BENCH_COLUMNS, &rows)? } else { table(&BENCH_COLUMNS, &rows) };
            print!("{text}");
        }
    }
    Ok(true)
}

pub fn matrix(args: MatrixArgs) -> Result<bool, CliError> {
    let rows: Vec<Vec<String>> = matrix_rows().into_iter().map(Vec::from).collect();
    let text = match args.format.unwrap_or(Format::Table) {
        Format::Table => table(&MATRIX_COLUMNS, &rows),
        Format::Csv => csv_text(&MATRIX_COLUMNS, &rows)?,
        Format::Json => {
            let objects: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .into_iter()
                .map(|row| MATRIX_COLUMNS.iter().map(|c| c.to_string()).zip(row.into_iter().map(Into::into)).collect())
                .collect();
            to_json(&objects)
        }
    };
    match &args.out {
        Some(path) => write_file(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(true)
}

#[derive(Debug, Serialize)]
struct DumpSpec {
    scheme: SchemeId,
    workload: Workload,
    wonly: bool,
    config: SchemeConfig,
}

#[derive(Debug, Serialize)]
struct TraceSummary {
    file: String,
    records: usize,
    reads: usize,
    writes: usize,
    erases: usize,
    digest: String,
}

#[derive(Debug, Serialize)]
struct DumpResults {
    trace: TraceSummary,
    snapshot: SnapshotMeta,
    run: RunStats,
}

/// The trace starts after setup: it covers the workload's requests and any
/// garbage collection in between.
pub fn dump(args: DumpArgs, schemes: SchemeConfig) -> Result<bool, CliError> {
    let id = args.scheme.ok_or_else(|| usage("dump needs --scheme"))?;
    let dir: PathBuf = args.out.clone().ok_or_else(|| usage("dump needs --out"))?;
    let w = workload(args.ops, args.seed, args.mix, args.gc_every, args.address_space)?;
    let start = Instant::now();
    let mut scheme = create(id, &schemes);
    let keys = scheme.setup(SecurityParam::default(), &mut SeededRng::new(w.seed)).map_err(failed)?;
    scheme.take_trace();
    let requests = w.generate(scheme.block_payload_len(), scheme.capacity(Level::Pub), scheme.capacity(Level::Hid));
    let mut trace = OpTrace::new();
    let run = run_traced(scheme.as_mut(), &keys, &requests, w.gc_every, |t| {
        trace.extend(if args.wonly { wonly(&t) } else { t })
    })
    .map_err(failed)?;

    create_dir(&dir)?;
    let trace_path = dir.join("trace.jsonl");
    let mut bytes = Vec::new();
    write_trace(&trace, &mut bytes).map_err(|e| io_failed(&trace_path, e))?;
    write_file(&trace_path, &bytes)?;
    let snapshot = write_snapshot(&dir, "snapshot", &scheme.snapshot(), w.seed, id.as_str())
        .map_err(|e| io_failed(&dir, e))?;
    let results = DumpResults {
        trace: TraceSummary {
            file: "trace.jsonl".into(),
            records: trace.len(),
            reads: trace.count(OpKind::Read),
            writes: trace.count(OpKind::Write),
            erases: trace.count(OpKind::Erase),
            digest: sha256_hex(&bytes),
        },
        snapshot,
        run,
    };
    let spec = DumpSpec { scheme: id, workload: w, wonly: args.wonly, config: schemes };
    let summary = Summary { command: "dump", spec, results, pass: true, timing: Timing::since(start) };
    emit_summary(&summary, Some(&dir))?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct WoramSpec {
    backend: SchemeId,
    pairs: usize,
    seed: u64,
    max_writes: usize,
    max_reads: usize,
    params: AdapterParams,
    alpha: f64,
    config: SchemeConfig,
}

#[derive(Debug, Serialize)]
struct WoramResults {
    capacity: u64,
    cover_writes: usize,
    passed: usize,
    min_address_p: f64,
    min_byte_p: f64,
    reads_write_nothing: bool,
}

#[derive(Serialize)]
struct PairLine<'a> {
    pair: usize,
    #[serde(flatten)]
    report: &'a Def2Report,
}

fn random_sequence(rng: &mut SeededRng, writes: usize, reads: usize, cap: u64, len: usize) -> Vec<DataRequest> {
    let mut seq = Vec::with_capacity(writes + reads);
    for _ in 0..writes {
        seq.push(DataRequest::Write { addr: rng.random_range(0..cap), data: rng.bytes(len) });
    }
    for _ in 0..reads {
        seq.push(DataRequest::Read { addr: rng.random_range(0..cap) });
    }
    seq.shuffle(rng);
    seq
}

fn woram_error(e: WoramError) -> CliError {
    match e {
        WoramError::Config(m) => usage(m),
        other => failed(other),
    }
}

pub fn woram(args: WoramArgs, schemes: SchemeConfig) -> Result<bool, CliError> {
    let backend = args.backend.unwrap_or(SchemeId::Hive);
    let params = AdapterParams { n: args.n.unwrap_or(AdapterParams::default().n) };
    let spec = WoramSpec {
        backend,
        pairs: args.pairs.unwrap_or(50),
        seed: args.seed.unwrap_or(0),
        max_writes: args.max_writes.unwrap_or(30),
        max_reads: args.max_reads.unwrap_or(20),
        params,
        alpha: args.alpha.unwrap_or(Def2Options::default().alpha),
        config: schemes,
    };
    if spec.pairs == 0 || spec.max_writes == 0 || params.n == 0 {
        return Err(usage("pairs, max-writes and n must be at least 1"));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(usage(format!("alpha must lie in (0, 1), got {}", spec.alpha)));
    }
    let start = Instant::now();
    let probe = oram_setup(backend, &spec.config, params, SecurityParam::default(), &mut SeededRng::new(spec.seed))
        .map_err(woram_error)?;
    let (cap, len) = (probe.capacity(), probe.block_len());
    if cap == 0 {
        return Err(failed(format!("{backend} adapter has no hidden capacity")));
    }
    let mut rng = SeededRng::new(spec.seed);
    let mut reports = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let writes = rng.random_range(1..=spec.max_writes);
        let (r0, r1) = (rng.random_range(0..=spec.max_reads), rng.random_range(0..=spec.max_reads));
        let y0 = random_sequence(&mut rng, writes, r0, cap, len);
        let y1 = random_sequence(&mut rng, writes, r1, cap, len);
        let opts = Def2Options { seed: spec.seed.wrapping_add(i as u64 + 1), alpha: spec.alpha, params, ..Default::default() };
        reports.push(check_def2(backend, &spec.config, &y0, &y1, &opts).map_err(woram_error)?);
    }
    let results = WoramResults {
        capacity: cap,
        cover_writes: probe.cover_writes(),
        passed: reports.iter().filter(|r| r.pass).count(),
        min_address_p: reports.iter().map(|r| r.address_p).fold(1.0, f64::min),
        min_byte_p: reports.iter().map(|r| r.byte_p).fold(1.0, f64::min),
        reads_write_nothing: reports.iter().all(|r| r.reads_write_nothing),
    };
    let pass = results.passed == reports.len();
    eprintln!("{backend}: {}/{} pairs pass", results.passed, reports.len());
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_lines(&dir.join("records.jsonl"), reports.iter().enumerate().map(|(pair, report)| PairLine { pair, report }))?;
    }
    let summary = Summary { command: "woram", spec, results, pass, timing: Timing::since(start) };
    emit_summary(&summary, args.out.as_deref())?;
    Ok(pass)
}
