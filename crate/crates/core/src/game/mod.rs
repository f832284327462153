//! The multi-round distinguishing game.
//!
//! Each trial sets up a fresh scheme, flips a secret bit `b` and plays
//! `rounds` rounds. In every round the adversary submits a challenge
//! `(Pat¹_pub, Pat²_pub, Pat_hid)`; the challenger rejects it if it breaks
//! the scheme's rules, otherwise executes `Pat_b` and hands back a snapshot
//! of the medium, the write-only projection of the operation trace, or
//! both. At the end the adversary guesses `b`.
//!
//! The challenger executes `Pat_b` in request order, with no reordering.

pub mod adversary;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{Key, SeededRng};
use crate::device::{wonly, Geometry, OpTrace, Snapshot};
use crate::rules::{validate_challenge, RuleSet};
use crate::scheme::{create, Layer, SchemeConfig, SchemeError, SchemeId, SecurityParam};
use crate::stats::binomial_ci95;
use crate::pattern::Level;

pub use adversary::{Adversary, AdversaryKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("trial {trial}: {source}")]
    Scheme {
        trial: usize,
        #[source]
        source: SchemeError,
    },
}

/// What the adversary gets to see after each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Device,
    Trace,
    Both,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Device => "device",
            Orientation::Trace => "trace",
            Orientation::Both => "both",
        }
    }

    pub fn shows_snapshot(self) -> bool {
        matches!(self, Orientation::Device | Orientation::Both)
    }

    pub fn shows_trace(self) -> bool {
        matches!(self, Orientation::Trace | Orientation::Both)
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orientation {
    type Err = GameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "device" => Ok(Orientation::Device),
            "trace" => Ok(Orientation::Trace),
            "both" => Ok(Orientation::Both),
            _ => Err(GameError::Config(format!("unknown orientation {s:?} (device, trace, both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub scheme: SchemeId,
    pub orientation: Orientation,
    pub rounds: usize,
    pub trials: usize,
    pub seed: u64,
    /// Largest empirical advantage that still counts as a pass.
    pub epsilon: f64,
    pub lambda: SecurityParam,
    /// Hidden writes the built-in adversaries put in each challenge.
    pub hidden_writes: usize,
    pub schemes: SchemeConfig,
}

impl GameConfig {
    pub fn new(scheme: SchemeId) -> Self {
        GameConfig {
            scheme,
            orientation: Orientation::Device,
            rounds: 1,
            trials: 1000,
            seed: 0,
            epsilon: 0.05,
            lambda: SecurityParam::default(),
            hidden_writes: 2,
            schemes: SchemeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.rounds == 0 {
            return Err(GameError::Config("rounds must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(GameError::Config("trials must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&self.epsilon) {
            return Err(GameError::Config(format!("epsilon must lie in [0, 0.5], got {}", self.epsilon)));
        }
        if self.hidden_writes == 0 {
            return Err(GameError::Config("hidden_writes must be at least 1".into()));
        }
        self.lambda.check().map_err(|e| GameError::Config(e.to_string()))
    }
}

/// Everything the adversary learns at the start of a trial. The hidden key
/// is never part of it.
#[derive(Debug, Clone)]
pub struct AdversaryContext {
    pub scheme: SchemeId,
    pub layer: Layer,
    pub rules: RuleSet,
    pub geometry: Geometry,
    pub k_pub: Key,
    pub payload_len: usize,
    pub capacity_pub: u64,
    pub capacity_hid: u64,
    pub rounds: usize,
    pub orientation: Orientation,
    pub hidden_writes: usize,
    pub lambda: SecurityParam,
    /// Lets adversaries instantiate their own copy of the scheme.
    pub schemes: SchemeConfig,
}

impl AdversaryContext {
    pub fn capacity(&self, level: Level) -> u64 {
        match level {
            Level::Pub => self.capacity_pub,
            Level::Hid => self.capacity_hid,
        }
    }
}

/// Output of one round.
#[derive(Debug, Clone, Default)]
pub struct View {
    pub snapshot: Option<Snapshot>,
    pub wonly: Option<OpTrace>,
}

impl View {
    fn digest(&self, h: &mut Sha256) {
        if let Some(s) = &self.snapshot {
            h.update(s.digest().as_bytes());
        }
        if let Some(t) = &self.wonly {
            for e in t {
                h.update(e.location.to_le_bytes());
                h.update(e.data.as_deref().unwrap_or_default());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub b: u8,
    pub guess: Option<u8>,
    pub win: bool,
    /// The adversary submitted a challenge that broke the scheme's rules.
    pub invalid: bool,
    pub rule_violation: Option<String>,
    pub transcript_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub scheme: SchemeId,
    pub adversary: String,
    pub orientation: Orientation,
    pub rounds: usize,
    pub trials: usize,
    pub seed: u64,
    pub wins: u64,
    pub invalid: u64,
    /// `|wins / valid − 1/2|` over the valid trials.
    pub advantage: f64,
    pub ci95: f64,
    pub epsilon: f64,
    pub pass: bool,
    pub digest: String,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

/// Per-trial seed: the configured seed XOR the trial index.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ trial as u64
}

/// Plays one trial. `Ok(record)` also covers adversary rule violations.
pub fn run_trial(config: &GameConfig, adversary: &mut dyn Adversary, trial: usize) -> Result<TrialRecord, GameError> {
    let wrap = |source| GameError::Scheme { trial, source };
    let mut rng = SeededRng::new(trial_seed(config.seed, trial));
    let b = rng.coin();
    let mut setup_rng = rng.fork(1);
    let adv_rng = rng.fork(2);

    let mut scheme = create(config.scheme, &config.schemes);
    let keys = scheme.setup(config.lambda, &mut setup_rng).map_err(wrap)?;
    scheme.take_trace();
    let rules = scheme.rules();
    let ctx = AdversaryContext {
        scheme: config.scheme,
        layer: scheme.layer(),
        rules,
        geometry: scheme.geometry(),
        k_pub: keys.public().clone(),
        payload_len: scheme.block_payload_len(),
        capacity_pub: scheme.capacity(Level::Pub),
        capacity_hid: scheme.capacity(Level::Hid),
        rounds: config.rounds,
        orientation: config.orientation,
        hidden_writes: config.hidden_writes,
        lambda: config.lambda,
        schemes: config.schemes.clone(),
    };
    adversary.begin(&ctx, adv_rng);

    let mut transcript = Sha256::new();
    for round in 0..config.rounds {
        let pair = adversary.propose(round);
        if let Err(v) = validate_challenge(&rules, &pair) {
            return Ok(TrialRecord {
                trial,
                b: b as u8,
                guess: None,
                win: false,
                invalid: true,
                rule_violation: Some(v.to_string()),
                transcript_digest: hex::encode(transcript.finalize()),
            });
        }
        scheme.oper(&pair.pattern_for(b), &keys).map_err(wrap)?;
        let trace = scheme.take_trace();
        let view = View {
            snapshot: config.orientation.shows_snapshot().then(|| scheme.snapshot()),
            wonly: config.orientation.shows_trace().then(|| wonly(&trace)),
        };
        view.digest(&mut transcript);
        adversary.observe(round, &view);
    }
    let guess = adversary.guess();
    Ok(TrialRecord {
        trial,
        b: b as u8,
        guess: Some(guess as u8),
        win: guess == b,
        invalid: false,
        rule_violation: None,
        transcript_digest: hex::encode(transcript.finalize()),
    })
}

/// Runs `config.trials` independent trials, each with a fresh adversary
/// from `make`, and summarizes them. Trials run in parallel; results are
/// merged in trial order, so the outcome depends only on the inputs.
pub fn estimate_advantage_with<F>(config: &GameConfig, name: &str, make: F) -> Result<GameOutcome, GameError>
where
    F: Fn() -> Box<dyn Adversary> + Sync,
{
    config.validate()?;
    let records: Vec<TrialRecord> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let mut adv = make();
            run_trial(config, adv.as_mut(), t)
        })
        .collect::<Result<_, _>>()?;
    Ok(summarize(config, name, records))
}

pub fn estimate_advantage(config: &GameConfig, kind: AdversaryKind) -> Result<GameOutcome, GameError> {
    estimate_advantage_with(config, kind.as_str(), || kind.instantiate())
}

fn summarize(config: &GameConfig, name: &str, records: Vec<TrialRecord>) -> GameOutcome {
    let valid = records.iter().filter(|r| !r.invalid).count() as u64;
    let wins = records.iter().filter(|r| r.win).count() as u64;
    let invalid = records.len() as u64 - valid;
    let advantage = if valid == 0 { 0.0 } else { (wins as f64 / valid as f64 - 0.5).abs() };
    let mut h = Sha256::new();
    for r in &records {
        h.update(r.transcript_digest.as_bytes());
        h.update([r.b, r.guess.unwrap_or(2)]);
    }
    GameOutcome {
        scheme: config.scheme,
        adversary: name.to_string(),
        orientation: config.orientation,
        rounds: config.rounds,
        trials: config.trials,
        seed: config.seed,
        wins,
        invalid,
        advantage,
        ci95: binomial_ci95(wins, valid),
        epsilon: config.epsilon,
        pass: valid > 0 && advantage <= config.epsilon,
        digest: hex::encode(h.finalize()),
        records,
    }
}
