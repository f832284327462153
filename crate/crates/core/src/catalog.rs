//! Comparison data for published deniable storage schemes, implemented or
//! not, with the challenge rules that capture each one's assumptions.

use std::fmt;

use serde::Serialize;

use crate::rules::RuleSet;
use crate::scheme::{Layer, SchemeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SnapshotClass {
    Sin,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityType {
    Device,
    Trace,
}

/// Filled, half-filled or empty circle in the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Yes,
    Partial,
    No,
}

impl fmt::Display for SnapshotClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnapshotClass::Sin => "Sin",
            SnapshotClass::Mul => "Mul",
        })
    }
}

impl fmt::Display for SecurityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecurityType::Device => "device",
            SecurityType::Trace => "trace",
        })
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mark::Yes => "yes",
            Mark::Partial => "partial",
            Mark::No => "no",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub year: u16,
    pub snapshot: SnapshotClass,
    pub security: SecurityType,
    pub layer: Layer,
    /// Published relative throughput, public/hidden; "-" when unreported.
    pub io_perf: &'static str,
    pub space_util: &'static str,
    pub data_loss: Mark,
    pub no_additional_space: Mark,
    pub invisible: Mark,
    pub device: &'static str,
    #[serde(skip)]
    pub rules: Option<RuleSet>,
    /// Registry id when the simulator implements the scheme.
    pub implemented: Option<SchemeId>,
}

impl CatalogEntry {
    /// Human-readable `(Rule¹, Rule²)`, or "not stated".
    pub fn rule_text(&self) -> (String, String) {
        match &self.rules {
            Some(r) => r.describe(),
            None => ("not stated".into(), "not stated".into()),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn row(
    name: &'static str,
    year: u16,
    snapshot: SnapshotClass,
    security: SecurityType,
    layer: Layer,
    io_perf: &'static str,
    space_util: &'static str,
    marks: [Mark; 3],
    device: &'static str,
    rules: Option<RuleSet>,
    implemented: Option<SchemeId>,
) -> CatalogEntry {
    CatalogEntry {
        name,
        year,
        snapshot,
        security,
        layer,
        io_perf,
        space_util,
        data_loss: marks[0],
        no_additional_space: marks[1],
        invisible: marks[2],
        device,
        rules,
        implemented,
    }
}

/// Every cataloged scheme, in table order.
pub fn catalog() -> Vec<CatalogEntry> {
    use Layer::*;
    use Mark::*;
    use SecurityType::{Device as Dev, Trace};
    use SnapshotClass::*;
    let general = "General";
    let nand = "NAND flash";
    let single = Some(RuleSet::unrestricted_no_pub2());
    let datalair = RuleSet::datalair(1.0).ok();
    let mobiceal = RuleSet::mobiceal(1.0).ok();
    vec![
        row("StegFS98", 1998, Sin, Dev, Fs, "-", "≈15%", [Yes, Yes, No], general, single, None),
        row("StegFS99", 1999, Sin, Dev, Fs, "0.86/0.06", "-", [Yes, Yes, Partial], general, single, None),
        row("StegFS03", 2003, Sin, Dev, Fs, "0.06", ">80%", [Yes, Yes, No], general, single, None),
        row("TrueCrypt", 2004, Sin, Dev, Bd, "-", "100%", [Yes, Yes, No], general, single, Some(SchemeId::HiddenVolume)),
        row("MobiFlage", 2013, Sin, Dev, Bd, "0.95", "100%", [Yes, Yes, No], general, single, None),
        row("MobiPluto", 2015, Sin, Dev, Bd, "-", "100%", [Yes, Yes, No], general, None, None),
        row("DEFTL", 2017, Sin, Dev, Ftl, "-", "100%", [No, Yes, No], nand, Some(RuleSet::unmount_no_pub2()), None),
        row("DEFY", 2015, Mul, Dev, Fs, "-", "100%", [Yes, No, No], nand, Some(RuleSet::defy()), None),
        row("MobiCeal", 2018, Mul, Dev, Bd, "0.78", "-", [Yes, Yes, No], general, mobiceal, None),
        row(
            "INFUSE",
            2020,
            Mul,
            Dev,
            Fs,
            "0.94/0.03",
            ">100%",
            [Yes, Yes, Partial],
            "Certain NAND flash",
            Some(RuleSet::unmount_no_pub2()),
            None,
        ),
        row("PEARL", 2021, Mul, Dev, Ftl, "0.6/0.15", "80%", [Yes, Yes, No], nand, Some(RuleSet::pearl()), Some(SchemeId::Pearl)),
        row("HIVE", 2014, Mul, Trace, Bd, "-", "50%", [No, Yes, No], general, Some(RuleSet::hive()), Some(SchemeId::Hive)),
        row("HIVE-B", 2014, Mul, Trace, Bd, "0.004", "50%", [No, No, No], general, Some(RuleSet::hive_b()), Some(SchemeId::HiveB)),
        row("DataLair", 2017, Mul, Trace, Bd, "0.19/0.01", "50%", [No, No, No], general, datalair, None),
        row("ECD", 2017, Mul, Trace, Ftl, "*", "52.5%", [Yes, No, No], nand, single, None),
        row("PD-DM", 2019, Mul, Trace, Bd, "0.10/0.07", "≈50%", [No, Yes, No], general, datalair, Some(SchemeId::PdDm)),
    ]
}

pub fn find(name: &str) -> Option<CatalogEntry> {
    catalog().into_iter().find(|e| e.name.eq_ignore_ascii_case(name))
}

/// Column names of the flat matrix export.
pub const MATRIX_COLUMNS: [&str; 14] = [
    "scheme",
    "year",
    "snapshot",
    "security",
    "layer",
    "io_perf",
    "space_util",
    "data_loss",
    "no_additional_space",
    "invisible",
    "device",
    "rule1",
    "rule2",
    "implemented",
];

/// One row of strings per entry, in [`MATRIX_COLUMNS`] order.
pub fn matrix_rows() -> Vec<[String; 14]> {
    catalog()
        .into_iter()
        .map(|e| {
            let (r1, r2) = e.rule_text();
            [
                e.name.to_string(),
                e.year.to_string(),
                e.snapshot.to_string(),
                e.security.to_string(),
                e.layer.to_string(),
                e.io_perf.to_string(),
                e.space_util.to_string(),
                e.data_loss.to_string(),
                e.no_additional_space.to_string(),
                e.invisible.to_string(),
                e.device.to_string(),
                r1,
                r2,
                e.implemented.map_or("-".to_string(), |id| id.as_str().to_string()),
            ]
        })
        .collect()
}
