//! SMT queries over candidate port mappings.
//!
//! [`find_mapping`] asks for any single-μop mapping that reproduces a set of
//! measurements within ε per instruction; [`find_other_mapping`] additionally
//! asks for an experiment on which that mapping and a given one disagree by
//! more than 2ε per instruction. Every answer is re-checked with exact
//! rational simulation before it is returned.

pub mod encode;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{big, decimal_ratio, smt_real};
use crate::mapping::{Experiment, MappingError, PortMapping, PortSet, PortUsage};
use crate::smt::{CheckResult, Sexp, SmtError, SmtSession, DEFAULT_SOLVER};
use crate::vcpu::clipped_throughput;

pub use encode::{
    check_linear, emit_relate_throughput, Count, ExperimentEncoding, Lit, MappingEncoding, Script, ThroughputEncoding,
    UopEncoding,
};

/// An instruction with two μops, one of which it shares with a proper
/// blocking instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImproperSpec {
    pub insn: String,
    pub shared_with: String,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub r_max: Option<Ratio<i64>>,
    pub n_ports: usize,
    pub port_counts: BTreeMap<String, u32>,
    /// Largest count of a single instruction in a searched experiment.
    pub multiplicity_bound: u32,
    pub solver_command: String,
    pub timeout: Duration,
    pub improper_blockers: Vec<ImproperSpec>,
    /// Every query script is appended here when set.
    pub transcript: Option<PathBuf>,
}

impl SolverConfig {
    pub fn new(n_ports: usize, port_counts: BTreeMap<String, u32>) -> Self {
        SolverConfig {
            epsilon: 0.02,
            r_max: None,
            n_ports,
            port_counts,
            multiplicity_bound: 20,
            solver_command: DEFAULT_SOLVER.to_string(),
            timeout: Duration::from_secs(300),
            improper_blockers: Vec::new(),
            transcript: None,
        }
    }

    /// Instructions the free mapping ranges over, sorted by id.
    pub fn scope(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.port_counts.keys().cloned().collect();
        ids.extend(self.improper_blockers.iter().map(|s| s.insn.clone()));
        ids.sort();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no port count known for `{0}`")]
    MissingPortCount(String),
    #[error("instruction `{0}` is not in the inference scope")]
    UnknownInstruction(String),
    #[error("cannot encode query: {0}")]
    Encoding(String),
    #[error("solver timed out after {0:?}")]
    Timeout(Duration),
    #[error("solver answered unknown")]
    Unknown,
    #[error(transparent)]
    Smt(SmtError),
    #[error("malformed model: {0}")]
    Model(String),
    #[error("solver answer fails exact re-check: {0}")]
    Unsound(String),
    #[error("cannot append solver transcript: {0}")]
    Transcript(std::io::Error),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

impl From<SmtError> for SolverError {
    fn from(e: SmtError) -> Self {
        match e {
            SmtError::Timeout(d) => SolverError::Timeout(d),
            e => SolverError::Smt(e),
        }
    }
}

fn exps_band(e: &Experiment, cycles: f64, epsilon: &BigRational) -> Result<(BigRational, BigRational), SolverError> {
    if !cycles.is_finite() {
        return Err(SolverError::Encoding(format!("non-finite measurement {cycles} for {e}")));
    }
    let t = decimal_ratio(cycles);
    let slack = epsilon * BigRational::from_integer(BigInt::from(e.size()));
    Ok((&t - &slack, t + slack))
}

fn check_config(exps: &[(Experiment, f64)], cfg: &SolverConfig) -> Result<BigRational, SolverError> {
    if !(cfg.epsilon.is_finite() && cfg.epsilon > 0.0) {
        return Err(SolverError::Encoding(format!("epsilon must be positive, got {}", cfg.epsilon)));
    }
    let scope = cfg.scope();
    for (e, _) in exps {
        if e.is_empty() {
            return Err(SolverError::Encoding("empty experiment".into()));
        }
        if let Some(id) = e.instructions().find(|id| scope.binary_search(&id.to_string()).is_err()) {
            return Err(SolverError::UnknownInstruction(id.to_string()));
        }
    }
    Ok(decimal_ratio(cfg.epsilon))
}

/// Script for "some mapping explains all of `exps`". Returns the script and
/// the free mapping encoding.
pub fn find_mapping_script(exps: &[(Experiment, f64)], cfg: &SolverConfig) -> Result<(Script, MappingEncoding), SolverError> {
    let eps = check_config(exps, cfg)?;
    let mut script = Script::default();
    let menc = MappingEncoding::free(&cfg.scope(), cfg.n_ports, &cfg.port_counts, &cfg.improper_blockers, &mut script)?;
    assert_measurements(exps, &menc, &eps, cfg.r_max, &mut script)?;
    Ok((script, menc))
}

fn assert_measurements(
    exps: &[(Experiment, f64)],
    menc: &MappingEncoding,
    eps: &BigRational,
    r_max: Option<Ratio<i64>>,
    script: &mut Script,
) -> Result<(), SolverError> {
    for (n, (e, cycles)) in exps.iter().enumerate() {
        let tenc = emit_relate_throughput(menc, &ExperimentEncoding::hardwired(e), &format!("r{n}"), r_max, script)?;
        let (lo, hi) = exps_band(e, *cycles, eps)?;
        script.assert(format!("(< {} {})", smt_real(&lo), tenc.t));
        script.assert(format!("(< {} {})", tenc.t, smt_real(&hi)));
    }
    Ok(())
}

/// Script for "a mapping explaining `exps` and an experiment on which it
/// differs from `m1`". Returns the script, the free mapping, the free
/// experiment, and the two throughput instances (`m1` first).
#[allow(clippy::type_complexity)]
pub fn find_other_mapping_script(
    exps: &[(Experiment, f64)],
    m1: &PortMapping,
    cfg: &SolverConfig,
    size_bound: Option<u32>,
) -> Result<(Script, MappingEncoding, ExperimentEncoding, ThroughputEncoding, ThroughputEncoding), SolverError> {
    let eps = check_config(exps, cfg)?;
    if m1.n_ports() != cfg.n_ports {
        return Err(SolverError::Encoding(format!(
            "mapping has {} ports, the query {}",
            m1.n_ports(),
            cfg.n_ports
        )));
    }
    let scope = cfg.scope();
    let mut script = Script::default();
    let free = MappingEncoding::free(&scope, cfg.n_ports, &cfg.port_counts, &cfg.improper_blockers, &mut script)?;
    let fixed = MappingEncoding::hardwired(m1, &scope)?;
    let eenc = ExperimentEncoding::free(&scope, cfg.multiplicity_bound, size_bound, &mut script);
    let t1 = emit_relate_throughput(&fixed, &eenc, "o1", cfg.r_max, &mut script)?;
    let t2 = emit_relate_throughput(&free, &eenc, "o2", cfg.r_max, &mut script)?;
    let two_eps = smt_real(&(eps.clone() * BigRational::from_integer(BigInt::from(2))));
    let gap = format!("(* {two_eps} {})", eenc.size_term());
    script.assert(format!(
        "(or (> (- {a} {b}) {gap}) (> (- {b} {a}) {gap}))",
        a = t1.t,
        b = t2.t
    ));
    assert_measurements(exps, &free, &eps, cfg.r_max, &mut script)?;
    Ok((script, free, eenc, t1, t2))
}

/// Runs `script` in a fresh solver process; on sat returns the values of
/// `names`.
fn run(
    script: &Script,
    names: &[String],
    cfg: &SolverConfig,
    label: &str,
) -> Result<Option<BTreeMap<String, Sexp>>, SolverError> {
    let mut session = SmtSession::spawn(&cfg.solver_command, cfg.timeout)?;
    let mut result = (|| {
        for c in &script.commands {
            session.send(c)?;
        }
        match session.check()? {
            CheckResult::Unsat => Ok(None),
            CheckResult::Unknown => Err(SolverError::Unknown),
            CheckResult::Sat => Ok(Some(session.get_values(names)?)),
        }
    })();
    if let Some(path) = &cfg.transcript {
        let appended = OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| {
            writeln!(f, "; {label}")?;
            for line in session.transcript() {
                writeln!(f, "{line}")?;
            }
            Ok(())
        });
        if let Err(e) = appended {
            if result.is_ok() {
                result = Err(SolverError::Transcript(e));
            }
        }
    }
    result
}

fn model_bool(values: &BTreeMap<String, Sexp>, name: &str) -> Result<bool, SolverError> {
    values
        .get(name)
        .and_then(Sexp::as_bool)
        .ok_or_else(|| SolverError::Model(format!("`{name}` has no boolean value")))
}

fn lit_value(lit: &Lit, values: &BTreeMap<String, Sexp>) -> Result<bool, SolverError> {
    match lit {
        Lit::Const(b) => Ok(*b),
        Lit::Var(v) => model_bool(values, v),
    }
}

/// Reads the mapping denoted by `menc` out of a model.
pub fn decode_mapping(menc: &MappingEncoding, values: &BTreeMap<String, Sexp>) -> Result<PortMapping, SolverError> {
    let mut m = PortMapping::new(menc.n_ports)?;
    for (id, (_, uops)) in &menc.insns {
        let mut entries = Vec::new();
        for u in uops {
            let mut ports = Vec::new();
            for (k, lit) in u.ports.iter().enumerate() {
                if lit_value(lit, values)? {
                    ports.push(k);
                }
            }
            if ports.is_empty() {
                return Err(SolverError::Model(format!("a μop of `{id}` has no ports")));
            }
            entries.push((PortSet::from_ports(ports), u.multiplicity));
        }
        m.insert(id.clone(), PortUsage::from_entries(entries).canonical())?;
    }
    Ok(m)
}

/// Reads the experiment denoted by `eenc` out of a model.
pub fn decode_experiment(eenc: &ExperimentEncoding, values: &BTreeMap<String, Sexp>) -> Result<Experiment, SolverError> {
    let mut e = Experiment::new();
    for (id, c) in &eenc.counts {
        let n = match c {
            Count::Const(n) => *n,
            Count::Var(v) => values
                .get(v)
                .and_then(Sexp::as_integer)
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| SolverError::Model(format!("`{v}` has no non-negative integer value")))?,
        };
        e.add(id.clone(), n);
    }
    Ok(e)
}

fn clipped_big(m: &PortMapping, e: &Experiment, r_max: Option<Ratio<i64>>) -> Result<BigRational, SolverError> {
    Ok(big(clipped_throughput(m, e, r_max)?))
}

fn check_cardinality(m: &PortMapping, cfg: &SolverConfig) -> Result<(), SolverError> {
    for (id, c) in &cfg.port_counts {
        if cfg.improper_blockers.iter().any(|s| &s.insn == id) {
            continue;
        }
        let ok = matches!(m.usage(id).map(PortUsage::entries), Some([(ps, 1)]) if ps.len() == *c as usize);
        if !ok {
            return Err(SolverError::Unsound(format!("`{id}` does not have one μop on {c} ports")));
        }
    }
    Ok(())
}

/// Exact check that `m` reproduces every measurement within ε·|e|.
pub fn check_explains(m: &PortMapping, exps: &[(Experiment, f64)], cfg: &SolverConfig) -> Result<(), SolverError> {
    let eps = decimal_ratio(cfg.epsilon);
    for (e, cycles) in exps {
        let (lo, hi) = exps_band(e, *cycles, &eps)?;
        let t = clipped_big(m, e, cfg.r_max)?;
        if !(lo < t && t < hi) {
            return Err(SolverError::Unsound(format!(
                "mapping predicts {t} cycles for {e}, measured {cycles}"
            )));
        }
    }
    Ok(())
}

/// Exact check that `m1` and `m2` differ by more than 2ε·|e| on `e`.
pub fn check_gap(m1: &PortMapping, m2: &PortMapping, e: &Experiment, cfg: &SolverConfig) -> Result<(), SolverError> {
    let t1 = clipped_big(m1, e, cfg.r_max)?;
    let t2 = clipped_big(m2, e, cfg.r_max)?;
    let gap = decimal_ratio(cfg.epsilon) * BigRational::from_integer(BigInt::from(2 * e.size()));
    if (&t1 - &t2).abs() <= gap {
        return Err(SolverError::Unsound(format!(
            "{e} does not distinguish the mappings ({t1} vs {t2} cycles)"
        )));
    }
    Ok(())
}

/// A single-μop mapping over the configured scope that reproduces every
/// measurement in `exps` within ε·|e| cycles, or `None` if there is none.
pub fn find_mapping(exps: &[(Experiment, f64)], cfg: &SolverConfig) -> Result<Option<PortMapping>, SolverError> {
    if exps.is_empty() {
        return Err(SolverError::Encoding("no measurements".into()));
    }
    let (script, menc) = find_mapping_script(exps, cfg)?;
    let Some(values) = run(&script, &menc.variables(), cfg, "find_mapping")? else {
        return Ok(None);
    };
    let m = decode_mapping(&menc, &values)?;
    check_cardinality(&m, cfg)?;
    check_explains(&m, exps, cfg)?;
    Ok(Some(m))
}

/// A mapping explaining `exps` together with an experiment (of at most
/// `size_bound` instructions when given) on which it and `m1` differ by more
/// than 2ε·|e| cycles, or `None` if there is none.
pub fn find_other_mapping(
    exps: &[(Experiment, f64)],
    m1: &PortMapping,
    cfg: &SolverConfig,
    size_bound: Option<u32>,
) -> Result<Option<(PortMapping, Experiment)>, SolverError> {
    let (script, free, eenc, _, _) = find_other_mapping_script(exps, m1, cfg, size_bound)?;
    let mut names = free.variables();
    names.extend(eenc.variables());
    let label = match size_bound {
        Some(b) => format!("find_other_mapping size_bound={b}"),
        None => "find_other_mapping".to_string(),
    };
    let Some(values) = run(&script, &names, cfg, &label)? else {
        return Ok(None);
    };
    let m2 = decode_mapping(&free, &values)?;
    let e = decode_experiment(&eenc, &values)?;
    if e.is_empty() || size_bound.is_some_and(|b| e.size() > u64::from(b)) {
        return Err(SolverError::Unsound(format!("experiment {e} violates its size bound")));
    }
    check_cardinality(&m2, cfg)?;
    check_explains(&m2, exps, cfg)?;
    check_gap(m1, &m2, &e, cfg)?;
    Ok(Some((m2, e)))
}

#[cfg(test)]
mod tests;
