//! The built-in adversary battery.
//!
//! Every battery adversary submits rule-valid challenges from
//! [`ChallengeBuilder`] and keeps a *shadow*: its own instance of the
//! scheme, set up with keys it generated itself, on which it replays `Pat₀`
//! every round. The shadow shows what a purely public history looks like,
//! and each adversary guesses `1` when its statistic on the real view
//! departs from the shadow's.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::seq::SliceRandom;

use crate::crypto::{decrypt, Key, KeyPair, SeededRng};
use crate::device::{wonly, Geometry, OpTrace, Snapshot, Spare};
use crate::pattern::{ChallengePair, Level, Pattern, Request};
use crate::rules::{required_public_writes, Rule};
use crate::scheme::{create, PdScheme};
use crate::schemes::fixture::MARKER;
use crate::schemes::wom::WomCode;
use crate::stats::{bin_counts, two_sample_chi_square, RandomnessBattery};

use super::{AdversaryContext, GameError, View};

/// Adversary side of the game. `begin` runs once per trial, then
/// `propose`/`observe` alternate for each round, then `guess`.
pub trait Adversary: Send {
    fn begin(&mut self, ctx: &AdversaryContext, rng: SeededRng);
    fn propose(&mut self, round: usize) -> ChallengePair;
    fn observe(&mut self, round: usize, view: &View);
    fn guess(&mut self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdversaryKind {
    RandomGuess,
    FreeSpaceDiff,
    TraceLength,
    AddrDistribution,
    PayloadEntropy,
    /// Looks for the broken fixture's plaintext marker. Not part of the
    /// battery, since no real scheme stores one.
    Marker,
}

impl AdversaryKind {
    pub const ALL: [AdversaryKind; 6] = [
        AdversaryKind::RandomGuess,
        AdversaryKind::FreeSpaceDiff,
        AdversaryKind::TraceLength,
        AdversaryKind::AddrDistribution,
        AdversaryKind::PayloadEntropy,
        AdversaryKind::Marker,
    ];

    pub fn battery() -> [AdversaryKind; 5] {
        [
            AdversaryKind::RandomGuess,
            AdversaryKind::FreeSpaceDiff,
            AdversaryKind::TraceLength,
            AdversaryKind::AddrDistribution,
            AdversaryKind::PayloadEntropy,
        ]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdversaryKind::RandomGuess => "random_guess",
            AdversaryKind::FreeSpaceDiff => "free_space_diff",
            AdversaryKind::TraceLength => "trace_length",
            AdversaryKind::AddrDistribution => "addr_dist",
            AdversaryKind::PayloadEntropy => "payload_entropy",
            AdversaryKind::Marker => "marker",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            AdversaryKind::RandomGuess => "flips a coin",
            AdversaryKind::FreeSpaceDiff => "counts units that change between snapshots and do not decrypt under k_pub",
            AdversaryKind::TraceLength => "compares write-only trace lengths with a public-only replay",
            AdversaryKind::AddrDistribution => "chi-square test of physical write locations against a public-only replay",
            AdversaryKind::PayloadEntropy => "randomness battery over bytes that do not decrypt under k_pub",
            AdversaryKind::Marker => "searches the medium and trace for the fixture's plaintext marker",
        }
    }

    pub fn instantiate(self) -> Box<dyn Adversary> {
        match self {
            AdversaryKind::RandomGuess => Box::new(RandomGuess::default()),
            AdversaryKind::FreeSpaceDiff => Box::new(FreeSpaceDiff::default()),
            AdversaryKind::TraceLength => Box::new(TraceLength::default()),
            AdversaryKind::AddrDistribution => Box::new(AddrDistribution::default()),
            AdversaryKind::PayloadEntropy => Box::new(PayloadEntropy::default()),
            AdversaryKind::Marker => Box::new(MarkerSearch::default()),
        }
    }
}

impl fmt::Display for AdversaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdversaryKind {
    type Err = GameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AdversaryKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GameError::Config(format!("unknown adversary {s:?}")))
    }
}

/// Builds random challenges that satisfy the scheme's rules, with
/// `ctx.hidden_writes` hidden writes per round.
#[derive(Debug, Clone)]
pub struct ChallengeBuilder {
    rule1: Rule,
    rule2: Rule,
    k: usize,
    payload_len: usize,
    cap_pub: u64,
    cap_hid: u64,
}

impl ChallengeBuilder {
    pub fn new(ctx: &AdversaryContext) -> Self {
        ChallengeBuilder {
            rule1: ctx.rules.rule1,
            rule2: ctx.rules.rule2,
            k: ctx.hidden_writes,
            payload_len: ctx.payload_len,
            cap_pub: ctx.capacity_pub.max(1),
            cap_hid: ctx.capacity_hid.max(1),
        }
    }

    fn distinct(rng: &mut SeededRng, cap: u64, n: usize) -> Vec<u64> {
        if (n as u64) <= cap {
            rand::seq::index::sample(rng, cap as usize, n).into_iter().map(|a| a as u64).collect()
        } else {
            (0..n as u64).map(|i| i % cap).collect()
        }
    }

    fn writes(&self, rng: &mut SeededRng, level: Level, addrs: &[u64]) -> Pattern {
        addrs.iter().map(|&a| Request::write(level, a, rng.bytes(self.payload_len))).collect()
    }

    fn public_writes(&self, rng: &mut SeededRng, n: usize) -> Pattern {
        let addrs: Vec<u64> = (0..n).map(|_| rng.random_range(0..self.cap_pub)).collect();
        self.writes(rng, Level::Pub, &addrs)
    }

    pub fn build(&self, rng: &mut SeededRng) -> ChallengePair {
        let k = self.k;
        let hid_addrs = Self::distinct(rng, self.cap_hid, k);
        let hid = self.writes(rng, Level::Hid, &hid_addrs);
        let cover = Self::distinct(rng, self.cap_pub, k);

        let pub1 = match self.rule1 {
            Rule::MinPublicWrites { phi } => self.public_writes(rng, required_public_writes(phi, k)),
            Rule::EndsWithUnmount | Rule::ActiveEndsWithUnmount => {
                // Writing the cover addresses three times leaves 2k
                // superseded pages behind: k to carry hidden data and slack
                // for the scheme's own metadata.
                let mut p = Pattern::new();
                for _ in 0..3 {
                    p = p.concat(&self.writes(rng, Level::Pub, &cover));
                }
                p.push(Request::unmount());
                p
            }
            Rule::InvalidatesHiddenCount => {
                let first = self.writes(rng, Level::Pub, &cover);
                first.concat(&self.writes(rng, Level::Pub, &cover))
            }
            Rule::Unrestricted | Rule::Empty | Rule::SameLengthAsHidden | Rule::DummyWritesPerPublicWrite { .. } => {
                if self.rule1 == Rule::Empty {
                    Pattern::new()
                } else {
                    self.writes(rng, Level::Pub, &cover)
                }
            }
        };
        let pub2 = match self.rule2 {
            Rule::Empty => Pattern::new(),
            Rule::InvalidatesHiddenCount => {
                // Rewrites of pages written in Pat¹_pub; a fresh cover set
                // when Pat¹_pub wrote nothing.
                let written: Vec<u64> = pub1.iter().filter(|r| r.is_write()).map(|r| r.addr()).collect();
                if written.is_empty() {
                    let p = self.writes(rng, Level::Pub, &cover);
                    p.concat(&self.writes(rng, Level::Pub, &cover))
                } else {
                    self.writes(rng, Level::Pub, &cover)
                }
            }
            Rule::MinPublicWrites { phi } => self.public_writes(rng, required_public_writes(phi, k)),
            Rule::EndsWithUnmount | Rule::ActiveEndsWithUnmount => {
                let mut p = self.public_writes(rng, 1);
                p.push(Request::unmount());
                p
            }
            Rule::Unrestricted | Rule::SameLengthAsHidden | Rule::DummyWritesPerPublicWrite { .. } => {
                self.public_writes(rng, k)
            }
        };
        ChallengePair::new(pub1, pub2, hid)
    }
}

/// Decoded contents of a block or flash page image. `gen2` selects the
/// flash generation; `None` tries the first generation, then the second.
pub fn unit_contents(geometry: Geometry, image: &[u8], gen2: Option<bool>) -> Option<Vec<u8>> {
    match geometry {
        Geometry::Block { .. } => Some(image.to_vec()),
        Geometry::Flash { .. } => {
            let code = WomCode::standard();
            match gen2 {
                Some(g) => code.decode_bytes(image, if g { 2 } else { 1 }).ok(),
                None => code.decode_bytes(image, 1).or_else(|_| code.decode_bytes(image, 2)).ok(),
            }
        }
    }
}

/// Contents of `unit` in a snapshot, or `None` for an erased flash page.
pub fn snapshot_unit(snap: &Snapshot, unit: u64) -> Option<Vec<u8>> {
    match snap.spare_of(unit) {
        Some(spare) if !spare.contains(Spare::WRITTEN) => None,
        Some(spare) => unit_contents(snap.geometry, snap.unit(unit), Some(spare.contains(Spare::GEN2))),
        None => unit_contents(snap.geometry, snap.unit(unit), None),
    }
}

/// Whether the public key accounts for these contents.
pub fn is_public(k_pub: &Key, contents: &[u8]) -> bool {
    decrypt(k_pub, contents).is_ok()
}

fn unexplained_changes(k_pub: &Key, before: &Snapshot, after: &Snapshot) -> Vec<u64> {
    after
        .changed_units(before)
        .into_iter()
        .filter(|&u| match snapshot_unit(after, u) {
            Some(c) => !is_public(k_pub, &c),
            None => false,
        })
        .collect()
}

/// State shared by the battery: context, challenge source, and the shadow
/// replay of `Pat₀`.
struct Common {
    ctx: AdversaryContext,
    rng: SeededRng,
    builder: ChallengeBuilder,
    shadow: Option<(Box<dyn PdScheme>, KeyPair)>,
    pending: Option<ChallengePair>,
    real: Vec<View>,
    replay: Vec<View>,
}

impl Common {
    fn new(ctx: &AdversaryContext, mut rng: SeededRng) -> Self {
        let mut shadow_rng = rng.fork(0x5_4ad0);
        let mut scheme = create(ctx.scheme, &ctx.schemes);
        let shadow = scheme.setup(ctx.lambda, &mut shadow_rng).ok().map(|keys| {
            scheme.take_trace();
            (scheme, keys)
        });
        Common {
            ctx: ctx.clone(),
            builder: ChallengeBuilder::new(ctx),
            rng,
            shadow,
            pending: None,
            real: Vec::new(),
            replay: Vec::new(),
        }
    }

    fn propose(&mut self) -> ChallengePair {
        let pair = self.builder.build(&mut self.rng);
        self.pending = Some(pair.clone());
        pair
    }

    /// Records the real view and runs `Pat₀` on the shadow.
    fn observe(&mut self, view: &View) {
        self.real.push(view.clone());
        let pair = self.pending.take().unwrap_or_default();
        let orient = self.ctx.orientation;
        let shadow_view = match &mut self.shadow {
            Some((scheme, keys)) => {
                let ok = scheme.oper(&pair.pat0(), keys).is_ok();
                let trace = scheme.take_trace();
                View {
                    snapshot: orient.shows_snapshot().then(|| scheme.snapshot()),
                    wonly: (ok && orient.shows_trace()).then(|| wonly(&trace)),
                }
            }
            None => View::default(),
        };
        self.replay.push(shadow_view);
    }

    fn coin(&mut self) -> bool {
        self.rng.coin()
    }
}

fn snapshots(views: &[View]) -> Vec<&Snapshot> {
    views.iter().filter_map(|v| v.snapshot.as_ref()).collect()
}

fn traces(views: &[View]) -> Vec<&OpTrace> {
    views.iter().filter_map(|v| v.wonly.as_ref()).collect()
}

#[derive(Default)]
pub struct RandomGuess {
    rng: Option<SeededRng>,
    builder: Option<ChallengeBuilder>,
}

impl Adversary for RandomGuess {
    fn begin(&mut self, ctx: &AdversaryContext, rng: SeededRng) {
        self.rng = Some(rng);
        self.builder = Some(ChallengeBuilder::new(ctx));
    }

    /// Rule-valid random challenges, so that the trial counts on every
    /// scheme.
    fn propose(&mut self, _round: usize) -> ChallengePair {
        match (&self.builder, &mut self.rng) {
            (Some(b), Some(rng)) => b.build(rng),
            _ => ChallengePair::default(),
        }
    }

    fn observe(&mut self, _round: usize, _view: &View) {}

    fn guess(&mut self) -> bool {
        self.rng.get_or_insert_with(|| SeededRng::new(0)).coin()
    }
}

macro_rules! battery_adversary {
    ($name:ident) => {
        #[derive(Default)]
        pub struct $name {
            common: Option<Common>,
        }

        impl $name {
            fn common(&mut self) -> &mut Common {
                self.common.as_mut().expect("begin() not called")
            }
        }

        impl Adversary for $name {
            fn begin(&mut self, ctx: &AdversaryContext, rng: SeededRng) {
                self.common = Some(Common::new(ctx, rng));
            }

            fn propose(&mut self, _round: usize) -> ChallengePair {
                self.common().propose()
            }

            fn observe(&mut self, _round: usize, view: &View) {
                self.common().observe(view);
            }

            fn guess(&mut self) -> bool {
                let c = self.common();
                Self::decide(c)
            }
        }
    };
}

battery_adversary!(FreeSpaceDiff);
battery_adversary!(TraceLength);
battery_adversary!(AddrDistribution);
battery_adversary!(PayloadEntropy);
battery_adversary!(MarkerSearch);

fn total_unexplained(k_pub: &Key, snaps: &[&Snapshot]) -> usize {
    snaps.windows(2).map(|w| unexplained_changes(k_pub, w[0], w[1]).len()).sum()
}

impl FreeSpaceDiff {
    fn decide(c: &mut Common) -> bool {
        let real = snapshots(&c.real);
        if real.len() < 2 {
            return c.coin();
        }
        let observed = total_unexplained(&c.ctx.k_pub, &real);
        let expected = match &c.shadow {
            Some((_, keys)) => total_unexplained(keys.public(), &snapshots(&c.replay)),
            None => 0,
        };
        observed > expected
    }
}

impl TraceLength {
    fn decide(c: &mut Common) -> bool {
        let real = traces(&c.real);
        let shadow = traces(&c.replay);
        if real.is_empty() || real.len() != shadow.len() {
            return c.coin();
        }
        real.iter().zip(&shadow).any(|(a, b)| a.len() != b.len())
    }
}

const ADDR_BINS: usize = 32;

fn write_locations(views: &[View], k_pub: &Key) -> Vec<u64> {
    let ts = traces(views);
    if !ts.is_empty() {
        return ts.iter().flat_map(|t| t.write_locations()).collect();
    }
    let snaps = snapshots(views);
    snaps.windows(2).flat_map(|w| unexplained_changes(k_pub, w[0], w[1])).collect()
}

impl AddrDistribution {
    fn decide(c: &mut Common) -> bool {
        let units = c.ctx.geometry.units();
        let bins = ADDR_BINS.min(units as usize);
        let real = write_locations(&c.real, &c.ctx.k_pub);
        let shadow = match &c.shadow {
            Some((_, keys)) => write_locations(&c.replay, keys.public()),
            None => Vec::new(),
        };
        if real.is_empty() && shadow.is_empty() {
            return c.coin();
        }
        let p = two_sample_chi_square(&bin_counts(real, units, bins), &bin_counts(shadow, units, bins));
        p < 0.01
    }
}

const ENTROPY_SAMPLE: usize = 64 * 1024;

impl PayloadEntropy {
    fn decide(c: &mut Common) -> bool {
        let geometry = c.ctx.geometry;
        let mut sample = Vec::new();
        for t in traces(&c.real) {
            for e in t {
                if sample.len() >= ENTROPY_SAMPLE {
                    break;
                }
                if let Some(contents) = e.data.as_deref().and_then(|d| unit_contents(geometry, d, None)) {
                    if !is_public(&c.ctx.k_pub, &contents) {
                        sample.extend_from_slice(&contents);
                    }
                }
            }
        }
        if let Some(snap) = snapshots(&c.real).last() {
            let mut order: Vec<u64> = (0..geometry.units()).collect();
            order.shuffle(&mut c.rng);
            for u in order {
                if sample.len() >= ENTROPY_SAMPLE {
                    break;
                }
                if let Some(contents) = snapshot_unit(snap, u) {
                    if !is_public(&c.ctx.k_pub, &contents) {
                        sample.extend_from_slice(&contents);
                    }
                }
            }
        }
        sample.truncate(ENTROPY_SAMPLE);
        if sample.len() < 128 {
            return c.coin();
        }
        RandomnessBattery::run(&sample).min_p() < 0.001
    }
}

fn contains_marker(bytes: &[u8]) -> bool {
    bytes.windows(MARKER.len()).any(|w| w == MARKER)
}

impl MarkerSearch {
    fn decide(c: &mut Common) -> bool {
        let in_snapshots = snapshots(&c.real).iter().any(|s| contains_marker(&s.image));
        let in_traces = traces(&c.real)
            .iter()
            .any(|t| t.iter().any(|e| e.data.as_deref().is_some_and(contains_marker)));
        in_snapshots || in_traces
    }
}
