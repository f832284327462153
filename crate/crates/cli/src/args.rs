//! Command-line flags. Every subcommand's flags double as the schema of the
//! matching table in the `--config` file; flags given on the command line
//! win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdsim_core::{AdversaryKind, Orientation, SchemeConfig, SchemeError, SchemeId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "pdsim", version, about = "Plausible-deniability storage simulator")]
pub struct Cli {
    /// TOML file with defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play the security game and estimate adversary advantage.
    Game(GameArgs),
    /// Throughput against a baseline device, plus space utilization.
    Bench(BenchArgs),
    /// Print the comparison matrix of cataloged schemes.
    Matrix(MatrixArgs),
    /// Run a workload and write its trace and final snapshot.
    Dump(DumpArgs),
    /// Check the write-only ORAM adapter on random request pairs.
    Woram(WoramArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Csv,
    Json,
}

pub const BATTERY: &str = "battery";

fn scheme_id(s: &str) -> Result<SchemeId, String> {
    s.parse().map_err(|e: SchemeError| e.to_string())
}

fn orientation(s: &str) -> Result<Orientation, String> {
    s.parse().map_err(|e: pdsim_core::game::GameError| e.to_string())
}

fn adversary(s: &str) -> Result<String, String> {
    if s == BATTERY {
        return Ok(s.to_string());
    }
    s.parse::<AdversaryKind>().map(|k| k.as_str().to_string()).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameArgs {
    /// Scheme id: hidden_volume, hive, hive_b, pd_dm, pearl, plaintext_marker.
    #[arg(long, value_parser = scheme_id)]
    pub scheme: Option<SchemeId>,
    /// Adversary id, or "battery" for every built-in distinguisher.
    #[arg(long, value_parser = adversary)]
    pub adversary: Option<String>,
    /// What the adversary sees: device, trace or both.
    #[arg(long, value_parser = orientation)]
    pub orient: Option<Orientation>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest advantage that passes.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Pass only if the advantage reaches this floor instead.
    #[arg(long, value_name = "FLOOR")]
    pub expect_break: Option<f64>,
    /// Hidden writes per challenge.
    #[arg(long)]
    pub hidden_writes: Option<usize>,
    /// Directory for summary.json and records.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    /// Scheme to measure; repeat for several. Defaults to all.
    #[arg(long, value_parser = scheme_id)]
    pub scheme: Vec<SchemeId>,
    #[arg(long)]
    pub ops: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weights of public write, hidden write, public read, hidden read.
    #[arg(long, value_delimiter = ',', value_name = "PW,HW,PR,HR")]
    pub mix: Option<Vec<f64>>,
    /// Run garbage collection every this many requests.
    #[arg(long)]
    pub gc_every: Option<usize>,
    /// Only use the first this many addresses of each volume.
    #[arg(long)]
    pub address_space: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Directory for summary.json.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixArgs {
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpArgs {
    #[arg(long, value_parser = scheme_id)]
    pub scheme: Option<SchemeId>,
    #[arg(long)]
    pub ops: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_name = "PW,HW,PR,HR")]
    pub mix: Option<Vec<f64>>,
    #[arg(long)]
    pub gc_every: Option<usize>,
    #[arg(long)]
    pub address_space: Option<u64>,
    /// Keep only writes and erases in the trace.
    #[arg(long)]
    pub wonly: bool,
    /// Directory for trace.jsonl, snapshot.img, snapshot.json and summary.json.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WoramArgs {
    /// Backing scheme: hive or pd_dm.
    #[arg(long, value_parser = scheme_id)]
    pub backend: Option<SchemeId>,
    /// Number of request-sequence pairs to compare.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes per sequence are drawn from 1..=max_writes.
    #[arg(long)]
    pub max_writes: Option<usize>,
    /// Reads per sequence are drawn from 0..=max_reads.
    #[arg(long)]
    pub max_reads: Option<usize>,
    /// Length of every hidden pattern.
    #[arg(long)]
    pub n: Option<usize>,
    /// Significance level of the two-sample tests.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Directory for summary.json and records.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub game: GameArgs,
    pub bench: BenchArgs,
    pub matrix: MatrixArgs,
    pub dump: DumpArgs,
    pub woram: WoramArgs,
    pub schemes: SchemeConfig,
}

macro_rules! fill {
    ($dst:ident, $src:ident; $($field:ident),+ $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field; } )+
    };
}

impl GameArgs {
    pub fn merge(mut self, file: GameArgs) -> Self {
        fill!(self, file; scheme, adversary, orient, rounds, trials, seed, epsilon, expect_break, hidden_writes, out);
        self
    }
}

impl BenchArgs {
    pub fn merge(mut self, file: BenchArgs) -> Self {
        if self.scheme.is_empty() {
            self.scheme = file.scheme;
        }
        fill!(self, file; ops, seed, mix, gc_every, address_space, format, out);
        self
    }
}

impl MatrixArgs {
    pub fn merge(mut self, file: MatrixArgs) -> Self {
        fill!(self, file; format, out);
        self
    }
}

impl DumpArgs {
    pub fn merge(mut self, file: DumpArgs) -> Self {
        self.wonly |= file.wonly;
        fill!(self, file; scheme, ops, seed, mix, gc_every, address_space, out);
        self
    }
}

impl WoramArgs {
    pub fn merge(mut self, file: WoramArgs) -> Self {
        fill!(self, file; backend, pairs, seed, max_writes, max_reads, n, alpha, out);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn flags_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("[game]\nscheme = \"hive\"\nrounds = 4\ntrials = 10\n").unwrap();
        let cli = Cli::parse_from(["pdsim", "game", "--rounds", "8"]);
        let Command::Game(flags) = cli.command else { panic!("parsed the wrong subcommand") };
        let merged = flags.merge(file.game);
        assert_eq!(merged.scheme, Some(SchemeId::Hive));
        assert_eq!((merged.rounds, merged.trials), (Some(8), Some(10)));
    }

    #[test]
    fn file_rejects_unknown_keys_and_ids() {
        assert!(toml::from_str::<FileConfig>("[game]\nschema = \"hive\"\n").is_err());
        assert!(toml::from_str::<FileConfig>("[game]\nscheme = \"nope\"\n").is_err());
        let file: FileConfig = toml::from_str("[schemes.pd_dm]\nphi = 2.0\n").unwrap();
        assert_eq!(file.schemes.pd_dm.phi, 2.0);
        assert_eq!(file.schemes.block, SchemeConfig::default().block);
    }

    #[test]
    fn mix_takes_four_weights() {
        let cli = Cli::parse_from(["pdsim", "bench", "--mix", "1,0,0.5,0"]);
        let Command::Bench(b) = cli.command else { panic!("parsed the wrong subcommand") };
        assert_eq!(b.mix, Some(vec![1.0, 0.0, 0.5, 0.0]));
    }
}
