//! Challenge validation: the generic requirements every round's challenge
//! must meet, plus the scheme-specific constraints on `Pat¹_pub` and
//! `Pat²_pub` that encode each scheme's assumptions about the adversary.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::pattern::{ChallengePair, Level, Pattern, ReqOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Requirement {
    /// (a) `Pat¹_pub` and `Pat²_pub` contain only public requests.
    PublicPurity,
    /// (b) `Pat_hid` contains only hidden requests.
    HiddenPurity,
    /// (c) `Pat²_pub` is empty whenever `Pat_hid` is.
    EmptyCoupling,
    /// (d) scheme constraint on `Pat¹_pub`.
    Rule1,
    /// (d) scheme constraint on `Pat²_pub`.
    Rule2,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("challenge violates {requirement:?}: {detail}")]
pub struct RuleViolation {
    pub requirement: Requirement,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("parameter out of domain: {0}")]
    OutOfDomain(String),
}

/// Which public slot a rule constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Pub1,
    Pub2,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::Pub1 => "Pat¹_pub",
            Slot::Pub2 => "Pat²_pub",
        })
    }
}

/// A constraint on one public slot of a challenge. Checks are pure
/// functions of the three patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Unrestricted,
    Empty,
    /// Same number of requests as `Pat_hid`.
    SameLengthAsHidden,
    /// At least `⌈phi · |Pat_hid|⌉` public writes.
    MinPublicWrites { phi: f64 },
    /// Last request is `Unmount`.
    EndsWithUnmount,
    /// At least one non-`Unmount` public request, and the last one is `Unmount`.
    ActiveEndsWithUnmount,
    /// Supersedes (overwrites or deletes) at least `|Pat_hid|` previously
    /// written pages, counting pages written earlier in the challenge.
    InvalidatesHiddenCount,
    /// Every public write is accompanied by an exponentially distributed
    /// number of dummy block writes. Constrains scheme behavior, not the
    /// pattern, so the check always passes.
    DummyWritesPerPublicWrite { rate: f64 },
}

impl Rule {
    pub fn min_public_writes(phi: f64) -> Result<Rule, DomainError> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(DomainError::OutOfDomain(format!("phi must be positive, got {phi}")));
        }
        Ok(Rule::MinPublicWrites { phi })
    }

    pub fn check(&self, slot: Slot, pair: &ChallengePair) -> Result<(), String> {
        let target = match slot {
            Slot::Pub1 => &pair.pub1,
            Slot::Pub2 => &pair.pub2,
        };
        let k = pair.hid.len();
        match *self {
            Rule::Unrestricted | Rule::DummyWritesPerPublicWrite { .. } => Ok(()),
            Rule::Empty => {
                if target.is_empty() {
                    Ok(())
                } else {
                    Err(format!("{slot} must be empty, has {} requests", target.len()))
                }
            }
            Rule::SameLengthAsHidden => {
                if target.len() == k {
                    Ok(())
                } else {
                    Err(format!("{slot} has {} requests but Pat_hid has {k}", target.len()))
                }
            }
            Rule::MinPublicWrites { phi } => {
                let need = required_public_writes(phi, k);
                let have = target.iter().filter(|r| r.is_write() && r.level() == Level::Pub).count();
                if have >= need {
                    Ok(())
                } else {
                    Err(format!("{slot} has {have} public writes, needs {need} (deficit {})", need - have))
                }
            }
            Rule::EndsWithUnmount => match target.last() {
                Some(r) if r.op() == ReqOp::Unmount => Ok(()),
                _ => Err(format!("last operation in {slot} must be Unmount")),
            },
            Rule::ActiveEndsWithUnmount => {
                let active = target.iter().any(|r| r.op() != ReqOp::Unmount);
                match target.last() {
                    Some(r) if r.op() == ReqOp::Unmount && active => Ok(()),
                    _ => Err(format!("{slot} must contain public operations and end with Unmount")),
                }
            }
            Rule::InvalidatesHiddenCount => {
                let generated = invalidated_pages(slot, pair);
                if generated >= k {
                    Ok(())
                } else {
                    Err(format!("{slot} supersedes {generated} pages, Pat_hid needs {k}"))
                }
            }
        }
    }

    pub fn describe(&self, slot: Slot) -> String {
        match *self {
            Rule::Unrestricted => "no restrictions".into(),
            Rule::Empty => format!("{slot} must be an empty pattern"),
            Rule::SameLengthAsHidden => format!("{slot} and Pat_hid must be of equal length"),
            Rule::MinPublicWrites { phi } => {
                format!("{slot} must contain at least φ·k public writes, k = |Pat_hid|, φ = {phi}")
            }
            Rule::EndsWithUnmount => format!("last operation in {slot} must be Unmount"),
            Rule::ActiveEndsWithUnmount => {
                format!("{slot} must contain public operations and its last operation must be Unmount")
            }
            Rule::InvalidatesHiddenCount => {
                format!("{slot} must generate k 1st-invalid pages, k = |Pat_hid|")
            }
            Rule::DummyWritesPerPublicWrite { rate } => format!(
                "each public write in {slot} adds m = floor(-ln(1-f)/λ) dummy block writes, f ~ U(0,1), λ = {rate}"
            ),
        }
    }
}

/// `⌈phi · k⌉`, with a small tolerance so that products that are integral
/// in exact arithmetic are not rounded up.
pub fn required_public_writes(phi: f64, k: usize) -> usize {
    let x = phi * k as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Pages superseded by the requests of `slot`, given the pages written
/// before it in the challenge.
fn invalidated_pages(slot: Slot, pair: &ChallengePair) -> usize {
    let mut live: HashSet<u64> = HashSet::new();
    let mut count = 0;
    let mut visit = |p: &Pattern, counting: bool| {
        for r in p {
            if r.level() != Level::Pub {
                continue;
            }
            match r.op() {
                ReqOp::Write => {
                    if !live.insert(r.addr()) && counting {
                        count += 1;
                    }
                }
                ReqOp::Delete => {
                    if live.remove(&r.addr()) && counting {
                        count += 1;
                    }
                }
                _ => {}
            }
        }
    };
    match slot {
        Slot::Pub1 => visit(&pair.pub1, true),
        Slot::Pub2 => {
            visit(&pair.pub1, false);
            visit(&pair.pub2, true);
        }
    }
    count
}

/// The `(Rule¹, Rule²)` pair of a scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleSet {
    pub rule1: Rule,
    pub rule2: Rule,
}

impl RuleSet {
    pub const fn new(rule1: Rule, rule2: Rule) -> Self {
        RuleSet { rule1, rule2 }
    }

    /// Single-snapshot schemes (StegFS, TrueCrypt, MobiFlage, ECD).
    pub const fn unrestricted_no_pub2() -> Self {
        RuleSet::new(Rule::Unrestricted, Rule::Empty)
    }

    pub const fn hive() -> Self {
        RuleSet::new(Rule::SameLengthAsHidden, Rule::Empty)
    }

    pub const fn hive_b() -> Self {
        RuleSet::new(Rule::Unrestricted, Rule::SameLengthAsHidden)
    }

    pub fn datalair(phi: f64) -> Result<Self, DomainError> {
        Ok(RuleSet::new(Rule::min_public_writes(phi)?, Rule::Empty))
    }

    /// DEFTL and INFUSE.
    pub const fn unmount_no_pub2() -> Self {
        RuleSet::new(Rule::EndsWithUnmount, Rule::Empty)
    }

    pub const fn pearl() -> Self {
        RuleSet::new(Rule::EndsWithUnmount, Rule::InvalidatesHiddenCount)
    }

    pub const fn defy() -> Self {
        RuleSet::new(Rule::ActiveEndsWithUnmount, Rule::InvalidatesHiddenCount)
    }

    pub fn mobiceal(rate: f64) -> Result<Self, DomainError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(DomainError::OutOfDomain(format!("rate must be positive, got {rate}")));
        }
        Ok(RuleSet::new(Rule::DummyWritesPerPublicWrite { rate }, Rule::Empty))
    }

    pub fn check(&self, pair: &ChallengePair) -> Result<(), RuleViolation> {
        self.rule1
            .check(Slot::Pub1, pair)
            .map_err(|detail| RuleViolation { requirement: Requirement::Rule1, detail })?;
        self.rule2
            .check(Slot::Pub2, pair)
            .map_err(|detail| RuleViolation { requirement: Requirement::Rule2, detail })
    }

    pub fn describe(&self) -> (String, String) {
        (self.rule1.describe(Slot::Pub1), self.rule2.describe(Slot::Pub2))
    }
}

/// Enforces requirements (a)–(d) on a challenge.
pub fn validate_challenge(rules: &RuleSet, pair: &ChallengePair) -> Result<(), RuleViolation> {
    if !pair.pub1.all_at(Level::Pub) || !pair.pub2.all_at(Level::Pub) {
        return Err(RuleViolation {
            requirement: Requirement::PublicPurity,
            detail: "public slots contain hidden requests".into(),
        });
    }
    if !pair.hid.all_at(Level::Hid) {
        return Err(RuleViolation {
            requirement: Requirement::HiddenPurity,
            detail: "Pat_hid contains public requests".into(),
        });
    }
    if pair.hid.is_empty() && !pair.pub2.is_empty() {
        return Err(RuleViolation {
            requirement: Requirement::EmptyCoupling,
            detail: "Pat²_pub must be empty when Pat_hid is empty".into(),
        });
    }
    rules.check(pair)
}

/// Number of dummy block writes for a uniform sample `f` and rate:
/// `⌊−ln(1 − f) / rate⌋`.
pub fn exp_dummy_count(f: f64, rate: f64) -> Result<u64, DomainError> {
    if !(0.0..1.0).contains(&f) {
        return Err(DomainError::OutOfDomain(format!("f must lie in [0, 1), got {f}")));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(DomainError::OutOfDomain(format!("rate must be positive, got {rate}")));
    }
    Ok((-(1.0 - f).ln() / rate).floor() as u64)
}
