//! Port usage of arbitrary instructions, measured against blocking
//! instructions.
//!
//! For each blocking instruction `B` with port set `pu` (smallest sets first),
//! `k` copies of `B` saturate `pu`. Adding one instance of `i` then costs
//! `1/|pu|` extra cycles per μop of `i` that cannot leave `pu`, so the surplus
//! `(tp([k×B, i]) - tp([k×B])) · |pu|` counts those μops. μops already
//! attributed to a proper subset of `pu` are subtracted; what remains runs on
//! exactly `pu`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{usage_doc, UopDoc};
use crate::mapping::{Experiment, PortMapping, PortSet, PortUsage};
use crate::measure::{Harness, MeasureError};

/// Upper limit on the number of blocking instances per experiment.
pub const MAX_K: u32 = 100;

#[derive(Debug, Error)]
pub enum CharmapError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("{needed} blocking instances needed, more than the limit of {MAX_K}")]
    KTooLarge { needed: u64 },
    #[error("`{insn}` against `{blocker}`: surplus {raw:.4} μops is not integral")]
    NonIntegralSurplus { insn: String, blocker: String, raw: f64 },
    #[error("`{insn}` against `{blocker}`: fewer μops than already found on subsets")]
    NegativeSurplus { insn: String, blocker: String },
    #[error("`{insn}`: found {found} μops, measured {measured}")]
    UnexplainedUops {
        insn: String,
        found: u64,
        measured: u64,
        partial: PortUsage,
    },
    #[error("`{0}` executes no μops")]
    NoUops(String),
    #[error("`{insn}` is not a single-μop blocking instruction of the core mapping")]
    NotABlocker { insn: String },
    #[error("votes must be a positive odd number, got {0}")]
    InvalidVotes(u32),
}

/// How many blocking instances to use per experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KRule {
    /// `min(100, max(10, |pu|·uops, 2·|pu|·max(1, ⌊tp⌋)))`.
    #[default]
    Default,
    /// `|pu|·uops`, the smallest count that still saturates `pu`.
    Tight,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharmapConfig {
    #[serde(default)]
    pub k_rule: KRule,
    /// μop counts to use instead of the measured ones.
    #[serde(default)]
    pub uop_overrides: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteEntry {
    pub blocker: String,
    pub ports: PortSet,
}

/// Blocking instructions with their port sets, fewest ports first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockingSuite {
    entries: Vec<SuiteEntry>,
}

impl BlockingSuite {
    pub fn new(mut entries: Vec<SuiteEntry>) -> Self {
        entries.sort_by(|a, b| {
            (a.ports.canonical_key(), &a.blocker).cmp(&(b.ports.canonical_key(), &b.blocker))
        });
        // A second blocker for the same ports would count the same μops again.
        let mut seen = Vec::new();
        entries.retain(|e| {
            let fresh = !seen.contains(&e.ports);
            seen.push(e.ports);
            fresh
        });
        BlockingSuite { entries }
    }

    /// One entry per blocker, with the port set the core mapping assigns it.
    pub fn from_core(core: &PortMapping, blockers: &[String]) -> Result<Self, CharmapError> {
        let mut entries = Vec::new();
        for b in blockers {
            match core.usage(b).map(PortUsage::entries) {
                Some(&[(ports, 1)]) => entries.push(SuiteEntry {
                    blocker: b.clone(),
                    ports,
                }),
                _ => return Err(CharmapError::NotABlocker { insn: b.clone() }),
            }
        }
        Ok(Self::new(entries))
    }

    pub fn entries(&self) -> &[SuiteEntry] {
        &self.entries
    }
}

/// Number of blocking instances for a blocker on `pu_size` ports and an
/// instruction with `uop_count` μops and inverse throughput `tp_single`.
pub fn compute_k(pu_size: u32, uop_count: u32, tp_single: f64, rule: KRule) -> Result<u32, CharmapError> {
    let needed = u64::from(pu_size) * u64::from(uop_count);
    if needed > u64::from(MAX_K) {
        return Err(CharmapError::KTooLarge { needed });
    }
    Ok(match rule {
        KRule::Tight => needed as u32,
        KRule::Default => {
            let slow = tp_single.floor().clamp(1.0, f64::from(MAX_K)) as u64;
            let k = 10u64.max(needed).max(2 * u64::from(pu_size) * slow).min(u64::from(MAX_K));
            k as u32
        }
    })
}

/// μops of `i` confined to `entry.ports`, from the cycles `i` adds to `k`
/// instances of the blocker.
pub fn count_blocked_uops(i: &str, entry: &SuiteEntry, k: u32, h: &Harness) -> Result<u32, CharmapError> {
    let base = Experiment::from_pairs([(entry.blocker.as_str(), k)]);
    let with_i = base.clone().with(i, 1);
    let pu = entry.ports.len() as f64;
    let raw = (h.cycles(&with_i)? - h.cycles(&base)?) * pu;
    let nearest = raw.round();
    if (raw - nearest).abs() > h.epsilon() * f64::from(k) * pu || nearest < 0.0 {
        return Err(CharmapError::NonIntegralSurplus {
            insn: i.to_string(),
            blocker: entry.blocker.clone(),
            raw,
        });
    }
    Ok(nearest as u32)
}

/// μop count of `i`: the override if configured, else the measured counter.
pub fn uop_count(i: &str, h: &Harness, cfg: &CharmapConfig) -> Result<u64, CharmapError> {
    match cfg.uop_overrides.get(i) {
        Some(&n) => Ok(u64::from(n)),
        None => Ok(h.measure(&Experiment::singleton(i))?.uops),
    }
}

/// Port usage of `i` against every entry of `suite`.
pub fn characterize(i: &str, suite: &BlockingSuite, h: &Harness, cfg: &CharmapConfig) -> Result<PortUsage, CharmapError> {
    let measured = uop_count(i, h, cfg)?;
    if measured == 0 {
        return Err(CharmapError::NoUops(i.to_string()));
    }
    let uops = u32::try_from(measured).map_err(|_| CharmapError::KTooLarge { needed: measured })?;
    let tp_single = h.cycles(&Experiment::singleton(i))?;

    let mut found: Vec<(PortSet, u32)> = Vec::new();
    for entry in suite.entries() {
        let k = compute_k(entry.ports.len() as u32, uops, tp_single, cfg.k_rule)?;
        let surplus = i64::from(count_blocked_uops(i, entry, k, h)?);
        let on_subsets: i64 = found
            .iter()
            .filter(|(ps, _)| ps.is_proper_subset(entry.ports))
            .map(|&(_, n)| i64::from(n))
            .sum();
        let rest = surplus - on_subsets;
        if rest < 0 {
            return Err(CharmapError::NegativeSurplus {
                insn: i.to_string(),
                blocker: entry.blocker.clone(),
            });
        }
        if rest > 0 {
            found.push((entry.ports, rest as u32));
        }
    }
    let usage = PortUsage::from_entries(found).canonical();
    if usage.uop_count() != measured {
        return Err(CharmapError::UnexplainedUops {
            insn: i.to_string(),
            found: usage.uop_count(),
            measured,
            partial: usage,
        });
    }
    Ok(usage)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsageDoc {
    pub uops: Vec<UopDoc>,
}

/// Outcome of one characterization run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunResult {
    Usage(UsageDoc),
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharExclusion {
    pub id: String,
    pub reason: String,
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizationReport {
    pub results: BTreeMap<String, UsageDoc>,
    pub excluded: Vec<CharExclusion>,
}

impl CharacterizationReport {
    /// Adds every reported usage to `m`.
    pub fn apply_to(&self, m: &mut PortMapping) -> Result<(), crate::format::FormatError> {
        for (id, doc) in &self.results {
            let usage = crate::format::usage_from_doc(id, &doc.uops, m.n_ports())?;
            m.insert(id.clone(), usage)?;
        }
        Ok(())
    }
}

/// Characterizes each instruction `votes` times, each run in a fresh
/// measurement session, and keeps a result only if a strict majority of runs
/// agree on it.
pub fn characterize_all(
    insns: &[String],
    suite: &BlockingSuite,
    h: &Harness,
    cfg: &CharmapConfig,
    votes: u32,
) -> Result<CharacterizationReport, CharmapError> {
    if votes.is_multiple_of(2) {
        return Err(CharmapError::InvalidVotes(votes));
    }
    let sessions: Vec<Harness> = (0..votes).map(|_| h.fresh_session()).collect();
    let mut report = CharacterizationReport::default();
    for i in insns {
        let runs: Vec<Result<PortUsage, CharmapError>> =
            sessions.iter().map(|s| characterize(i, suite, s, cfg)).collect();
        let mut tally: Vec<(&PortUsage, u32)> = Vec::new();
        for u in runs.iter().flatten() {
            match tally.iter_mut().find(|(v, _)| *v == u) {
                Some((_, n)) => *n += 1,
                None => tally.push((u, 1)),
            }
        }
        match tally.iter().find(|(_, n)| 2 * n > votes) {
            Some((u, _)) => {
                report.results.insert(i.clone(), UsageDoc { uops: usage_doc(u) });
            }
            None => {
                let reason = match runs.iter().find_map(|r| r.as_ref().err()) {
                    Some(e) if votes == 1 => e.to_string(),
                    _ => format!("no majority among {votes} runs"),
                };
                log::warn!("excluding `{i}`: {reason}");
                report.excluded.push(CharExclusion {
                    id: i.clone(),
                    reason,
                    runs: runs
                        .iter()
                        .map(|r| match r {
                            Ok(u) => RunResult::Usage(UsageDoc { uops: usage_doc(u) }),
                            Err(e) => RunResult::Error { error: e.to_string() },
                        })
                        .collect(),
                });
            }
        }
    }
    Ok(report)
}
