//! QF_LIRA encodings of port mappings, experiments and the throughput relation.
//!
//! Symbols are derived from positions in the instruction scope (sorted ids), so
//! instruction names never reach the solver and scripts are reproducible
//! byte-for-byte:
//!
//! - `m_{i}_{u}_{k}`: μop `u` of instruction `i` may use port `k`
//! - `exp_{i}`: occurrences of instruction `i` in a free experiment
//! - `{prefix}_x_{i}_{u}_{k}`, `{prefix}_p_{k}`, `{prefix}_q_{k}`,
//!   `{prefix}_j_{i}_{u}`, `{prefix}_tm`, `{prefix}_t`: one throughput instance

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};

use super::{ImproperSpec, SolverError};
use crate::exact::{big, smt_real};
use crate::mapping::{Experiment, PortMapping};
use crate::smt::{parse_all, Sexp};

/// Whether a μop may use a port: decided up front or left to the solver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lit {
    Const(bool),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UopEncoding {
    /// One literal per port.
    pub ports: Vec<Lit>,
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingEncoding {
    pub n_ports: usize,
    /// Scope index and μops of every instruction, keyed by id.
    pub insns: BTreeMap<String, (usize, Vec<UopEncoding>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Count {
    Const(u32),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentEncoding {
    pub counts: BTreeMap<String, Count>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThroughputEncoding {
    /// Clipped inverse throughput.
    pub t: String,
    /// Inverse throughput of the port mapping alone.
    pub model_t: String,
}

/// An SMT-LIB command list under construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub commands: Vec<String>,
}

impl Script {
    pub fn declare(&mut self, name: &str, sort: &str) {
        self.commands.push(format!("(declare-const {name} {sort})"));
    }

    pub fn assert(&mut self, term: impl AsRef<str>) {
        self.commands.push(format!("(assert {})", term.as_ref()));
    }
}

/// `(+ a b ..)` with the degenerate cases spelled out.
fn sum(terms: &[String], zero: &str) -> String {
    match terms {
        [] => zero.to_string(),
        [t] => t.clone(),
        _ => format!("(+ {})", terms.join(" ")),
    }
}

fn real_int(n: u64) -> String {
    format!("{n}.0")
}

impl MappingEncoding {
    /// A solver-chosen mapping with one μop per instruction.
    ///
    /// Each μop gets exactly `port_counts[id]` ports. An improper blocker's
    /// first μop reuses the variables of its `shared_with` instruction; its
    /// second μop gets `port_counts[id]` ports if a fact is given and at least
    /// one port otherwise.
    pub fn free(
        scope: &[String],
        n_ports: usize,
        port_counts: &BTreeMap<String, u32>,
        improper: &[ImproperSpec],
        script: &mut Script,
    ) -> Result<MappingEncoding, SolverError> {
        let index: BTreeMap<&str, usize> = scope.iter().enumerate().map(|(n, id)| (id.as_str(), n)).collect();
        let own_vars = |i: usize, u: usize| -> Vec<String> { (0..n_ports).map(|k| format!("m_{i}_{u}_{k}")).collect() };
        let cardinality = |vars: &[String], op: &str, c: u32| -> String {
            let terms: Vec<String> = vars.iter().map(|v| format!("(ite {v} 1 0)")).collect();
            format!("({op} {} {c})", sum(&terms, "0"))
        };

        let mut insns = BTreeMap::new();
        for (i, id) in scope.iter().enumerate() {
            let spec = improper.iter().find(|s| &s.insn == id);
            let mut uops = Vec::new();
            match spec {
                None => {
                    let c = *port_counts
                        .get(id)
                        .ok_or_else(|| SolverError::MissingPortCount(id.clone()))?;
                    if c == 0 || c as usize > n_ports {
                        return Err(SolverError::Encoding(format!(
                            "port count {c} of `{id}` does not fit {n_ports} ports"
                        )));
                    }
                    let vars = own_vars(i, 0);
                    for v in &vars {
                        script.declare(v, "Bool");
                    }
                    script.assert(cardinality(&vars, "=", c));
                    uops.push(UopEncoding {
                        ports: vars.into_iter().map(Lit::Var).collect(),
                        multiplicity: 1,
                    });
                }
                Some(s) => {
                    let shared = *index
                        .get(s.shared_with.as_str())
                        .filter(|_| !improper.iter().any(|o| o.insn == s.shared_with))
                        .ok_or_else(|| {
                            SolverError::Encoding(format!(
                                "`{}` shares a μop with `{}`, which is not a proper blocking instruction in scope",
                                s.insn, s.shared_with
                            ))
                        })?;
                    uops.push(UopEncoding {
                        ports: own_vars(shared, 0).into_iter().map(Lit::Var).collect(),
                        multiplicity: 1,
                    });
                    let vars = own_vars(i, 1);
                    for v in &vars {
                        script.declare(v, "Bool");
                    }
                    script.assert(match port_counts.get(id) {
                        Some(&c) => cardinality(&vars, "=", c),
                        None => cardinality(&vars, ">=", 1),
                    });
                    uops.push(UopEncoding {
                        ports: vars.into_iter().map(Lit::Var).collect(),
                        multiplicity: 1,
                    });
                }
            }
            insns.insert(id.clone(), (i, uops));
        }
        Ok(MappingEncoding { n_ports, insns })
    }

    /// A fixed mapping; every μop entry of `m` becomes one constant μop.
    pub fn hardwired(m: &PortMapping, scope: &[String]) -> Result<MappingEncoding, SolverError> {
        let mut insns = BTreeMap::new();
        for (i, id) in scope.iter().enumerate() {
            let usage = m.usage(id).ok_or_else(|| SolverError::UnknownInstruction(id.clone()))?;
            let uops = usage
                .entries()
                .iter()
                .map(|&(ps, n)| UopEncoding {
                    ports: (0..m.n_ports()).map(|k| Lit::Const(ps.contains(k))).collect(),
                    multiplicity: n,
                })
                .collect();
            insns.insert(id.clone(), (i, uops));
        }
        Ok(MappingEncoding {
            n_ports: m.n_ports(),
            insns,
        })
    }

    /// Names of every solver-chosen literal, in declaration order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (_, uops) in self.insns.values() {
            for u in uops {
                for l in &u.ports {
                    if let Lit::Var(v) = l {
                        if !out.contains(v) {
                            out.push(v.clone());
                        }
                    }
                }
            }
        }
        out
    }
}

impl ExperimentEncoding {
    pub fn hardwired(e: &Experiment) -> ExperimentEncoding {
        ExperimentEncoding {
            counts: e.iter().map(|(id, n)| (id.to_string(), Count::Const(n))).collect(),
        }
    }

    /// One bounded integer per instruction: `0 <= exp_i <= multiplicity_bound`,
    /// `1 <= Σ exp_i`, and `Σ exp_i <= size_bound` when given.
    pub fn free(scope: &[String], multiplicity_bound: u32, size_bound: Option<u32>, script: &mut Script) -> ExperimentEncoding {
        let mut counts = BTreeMap::new();
        let mut names = Vec::new();
        for (i, id) in scope.iter().enumerate() {
            let v = format!("exp_{i}");
            script.declare(&v, "Int");
            script.assert(format!("(<= 0 {v})"));
            script.assert(format!("(<= {v} {multiplicity_bound})"));
            names.push(v.clone());
            counts.insert(id.clone(), Count::Var(v));
        }
        let total = sum(&names, "0");
        script.assert(format!("(>= {total} 1)"));
        if let Some(b) = size_bound {
            script.assert(format!("(<= {total} {b})"));
        }
        ExperimentEncoding { counts }
    }

    pub fn variables(&self) -> Vec<String> {
        self.counts
            .values()
            .filter_map(|c| match c {
                Count::Var(v) => Some(v.clone()),
                Count::Const(_) => None,
            })
            .collect()
    }

    fn count(&self, id: &str) -> Option<&Count> {
        self.counts.get(id).filter(|c| **c != Count::Const(0))
    }

    /// `|e|` as a real term.
    pub fn size_term(&self) -> String {
        let mut constant = 0u64;
        let mut terms = Vec::new();
        for c in self.counts.values() {
            match c {
                Count::Const(n) => constant += u64::from(*n),
                Count::Var(v) => terms.push(format!("(to_real {v})")),
            }
        }
        if constant > 0 || terms.is_empty() {
            terms.insert(0, real_int(constant));
        }
        sum(&terms, "0.0")
    }

    /// Mass of a μop with multiplicity `n` of instruction `id`, as a real term.
    fn mass(&self, id: &str, n: u32) -> Option<String> {
        Some(match self.count(id)? {
            Count::Const(c) => real_int(u64::from(*c) * u64::from(n)),
            Count::Var(v) if n == 1 => format!("(to_real {v})"),
            Count::Var(v) => format!("(* {}.0 (to_real {v}))", n),
        })
    }
}

/// Constrains `{prefix}_t` to the inverse throughput of `eenc` under `menc`,
/// clipped to at least `|e| / r_max` when `r_max` is given.
///
/// The program is the flow formulation of the port-mapping LP (mass
/// conservation, per-port totals bounded by the model throughput) plus an
/// optimality certificate: a nonempty set Q of saturated ports (`q_k`) and a
/// set J of μops confined to Q (`j_u`) whose mass fills Q exactly. Products of
/// booleans with reals are written as `ite`.
pub fn emit_relate_throughput(
    menc: &MappingEncoding,
    eenc: &ExperimentEncoding,
    prefix: &str,
    r_max: Option<Ratio<i64>>,
    script: &mut Script,
) -> Result<ThroughputEncoding, SolverError> {
    for id in eenc.counts.keys() {
        if !menc.insns.contains_key(id) {
            return Err(SolverError::UnknownInstruction(id.clone()));
        }
    }
    let n_ports = menc.n_ports;
    let tm = format!("{prefix}_tm");
    script.declare(&tm, "Real");
    for k in 0..n_ports {
        script.declare(&format!("{prefix}_p_{k}"), "Real");
        script.declare(&format!("{prefix}_q_{k}"), "Bool");
    }

    let mut port_terms: Vec<Vec<String>> = vec![Vec::new(); n_ports];
    let mut j_terms = Vec::new();
    for (id, (i, uops)) in &menc.insns {
        for (u, uop) in uops.iter().enumerate() {
            let Some(mass) = eenc.mass(id, uop.multiplicity) else {
                continue;
            };
            let j = format!("{prefix}_j_{i}_{u}");
            script.declare(&j, "Bool");
            let mut xs = Vec::new();
            for (k, lit) in uop.ports.iter().enumerate() {
                if *lit == Lit::Const(false) {
                    continue;
                }
                let x = format!("{prefix}_x_{i}_{u}_{k}");
                script.declare(&x, "Real");
                script.assert(format!("(>= {x} 0.0)"));
                let q = format!("{prefix}_q_{k}");
                match lit {
                    Lit::Var(m) => {
                        script.assert(format!("(=> (not {m}) (= {x} 0.0))"));
                        script.assert(format!("(=> {m} (=> {j} {q}))"));
                    }
                    Lit::Const(_) => script.assert(format!("(=> {j} {q})")),
                }
                port_terms[k].push(x.clone());
                xs.push(x);
            }
            script.assert(format!("(= {} {mass})", sum(&xs, "0.0")));
            j_terms.push(format!("(ite {j} {mass} 0.0)"));
        }
    }

    let mut q_terms = Vec::new();
    let mut qs = Vec::new();
    for (k, xs) in port_terms.iter().enumerate() {
        let p = format!("{prefix}_p_{k}");
        let q = format!("{prefix}_q_{k}");
        script.assert(format!("(= {p} {})", sum(xs, "0.0")));
        script.assert(format!("(<= {p} {tm})"));
        script.assert(format!("(= {q} (= {p} {tm}))"));
        q_terms.push(format!("(ite {q} {tm} 0.0)"));
        qs.push(q);
    }
    script.assert(match qs.as_slice() {
        [q] => q.clone(),
        _ => format!("(or {})", qs.join(" ")),
    });
    script.assert(format!("(= {} {})", sum(&j_terms, "0.0"), sum(&q_terms, "0.0")));

    let t = match r_max {
        None => tm.clone(),
        Some(r) => {
            let t = format!("{prefix}_t");
            script.declare(&t, "Real");
            let inv = smt_real(&(BigRational::from_integer(BigInt::from(1)) / big(r)));
            let floor = format!("(* {inv} {})", eenc.size_term());
            script.assert(format!("(>= {t} {tm})"));
            script.assert(format!("(>= {t} {floor})"));
            script.assert(format!("(or (= {t} {tm}) (= {t} {floor}))"));
            t
        }
    };
    Ok(ThroughputEncoding { t, model_t: tm })
}

/// Checks that no multiplication or division in `commands` has more than one
/// non-constant operand (division: a non-constant divisor).
pub fn check_linear(commands: &[String]) -> Result<(), String> {
    fn walk(s: &Sexp) -> Result<(), String> {
        let Some(items) = s.list() else {
            return Ok(());
        };
        if let [Sexp::Atom(op), args @ ..] = items {
            let non_constant = args.iter().filter(|a| a.as_rational().is_none()).count();
            match op.as_str() {
                "*" if non_constant > 1 => return Err(format!("nonlinear product {s}")),
                "/" if args.iter().skip(1).any(|a| a.as_rational().is_none()) => {
                    return Err(format!("division by a variable in {s}"))
                }
                _ => {}
            }
        }
        items.iter().try_for_each(walk)
    }
    for c in commands {
        for s in parse_all(c).map_err(|e| format!("{e} in {c}"))? {
            walk(&s)?;
        }
    }
    Ok(())
}
