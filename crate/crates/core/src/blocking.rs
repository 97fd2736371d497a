//! Blocking-instruction discovery.
//!
//! 1. Single-μop instructions are candidates.
//! 2. A candidate's port count is its non-inverse throughput `1 / tp([i])`.
//! 3. Candidates with equal port counts share a port set iff their inverse
//!    throughputs add up: `tp([i, j]) = tp([i]) + tp([j])`. Equivalent
//!    candidates are merged and one representative is kept per port set.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::Experiment;
use crate::measure::{Harness, MeasureError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockingClass {
    pub representative: String,
    pub members: Vec<String>,
    pub port_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockingReport {
    pub classes: Vec<BlockingClass>,
    pub excluded: Vec<Exclusion>,
}

#[derive(Debug, Error)]
pub enum BlockingError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("`{insn}` executes {inverse:.4} instances per cycle, not an integral number of ports")]
    NonIntegralPortCount { insn: String, inverse: f64 },
    #[error("no instructions given")]
    NoInstructions,
}

/// Instructions whose singleton experiment reports exactly one μop.
pub fn find_candidates(insns: &[String], h: &Harness) -> Result<Vec<String>, BlockingError> {
    if insns.is_empty() {
        return Err(BlockingError::NoInstructions);
    }
    let mut out = Vec::new();
    for i in insns {
        if h.measure(&Experiment::singleton(i.as_str()))?.uops == 1 {
            out.push(i.clone());
        }
    }
    Ok(out)
}

/// Number of ports of a single-μop instruction, `round(1 / tp([i]))`.
pub fn port_count(i: &str, h: &Harness) -> Result<u32, BlockingError> {
    let tp = h.cycles(&Experiment::singleton(i))?;
    let inverse = 1.0 / tp;
    let nearest = inverse.round();
    if !inverse.is_finite() || nearest < 1.0 || (inverse - nearest).abs() > h.epsilon() * nearest {
        return Err(BlockingError::NonIntegralPortCount {
            insn: i.to_string(),
            inverse,
        });
    }
    Ok(nearest as u32)
}

/// Additivity test: `|tp([i, j]) - tp([i]) - tp([j])| <= 2ε`.
pub fn equivalent(i: &str, j: &str, h: &Harness) -> Result<bool, BlockingError> {
    let ti = h.cycles(&Experiment::singleton(i))?;
    let tj = h.cycles(&Experiment::singleton(j))?;
    let tij = h.cycles(&Experiment::singleton(i).with(j, 1))?;
    Ok((tij - (ti + tj)).abs() <= 2.0 * h.epsilon())
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let parent = self.0[x];
        if parent == x {
            return x;
        }
        let root = self.find(parent);
        self.0[x] = root;
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups candidates into blocking classes, one per port set.
///
/// Candidates with a non-integral port count are excluded and reported.
/// Cross-size pairs are never measured.
pub fn select_representatives(candidates: &[String], h: &Harness) -> Result<BlockingReport, BlockingError> {
    if candidates.is_empty() {
        return Err(BlockingError::NoInstructions);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort();
    sorted.dedup();

    let mut report = BlockingReport::default();
    let mut groups: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for c in sorted {
        match port_count(&c, h) {
            Ok(n) => groups.entry(n).or_default().push(c),
            Err(e @ BlockingError::NonIntegralPortCount { .. }) => {
                warn!("excluding blocking candidate {c}: {e}");
                report.excluded.push(Exclusion {
                    id: c,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }

    for (port_count, members) in groups {
        let mut uf = UnionFind::new(members.len());
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                if uf.find(a) != uf.find(b) && equivalent(&members[a], &members[b], h)? {
                    uf.union(a, b);
                }
            }
        }
        let mut classes: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (idx, m) in members.iter().enumerate() {
            classes.entry(uf.find(idx)).or_default().push(m.clone());
        }
        // Members are sorted, so the root (smallest index) is the smallest id.
        for members in classes.into_values() {
            report.classes.push(BlockingClass {
                representative: members[0].clone(),
                members,
                port_count,
            });
        }
    }
    report
        .classes
        .sort_by(|a, b| (a.port_count, &a.representative).cmp(&(b.port_count, &b.representative)));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::tests::{fma_example, ps};
    use crate::mapping::{PortMapping, PortUsage};
    use crate::measure::{BackendError, MeasureConfig, MeasurementBackend, RawObservation, SimulatedBackend};
    use crate::vcpu::SimConfig;
    use std::sync::Arc;

    fn harness(m: PortMapping) -> Harness {
        Harness::new(
            Arc::new(SimulatedBackend::new(m, SimConfig::default())),
            MeasureConfig::default(),
        )
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn fma_example_candidates() {
        let h = harness(fma_example());
        assert_eq!(find_candidates(&ids(&["add", "fma", "mul"]), &h).unwrap(), ids(&["add", "mul"]));
    }

    #[test]
    fn no_single_uop_instructions() {
        let m = PortMapping::new(2)
            .unwrap()
            .with("a", PortUsage::from_entries(vec![(ps(&[0]), 2)]))
            .unwrap()
            .with("b", PortUsage::from_entries(vec![(ps(&[0]), 1), (ps(&[1]), 1)]))
            .unwrap();
        assert!(find_candidates(&ids(&["a", "b"]), &harness(m)).unwrap().is_empty());
    }

    #[test]
    fn port_counts() {
        let h = harness(fma_example());
        assert_eq!(port_count("mul", &h).unwrap(), 1);
        assert_eq!(port_count("add", &h).unwrap(), 2);
        let skl = PortMapping::new(8)
            .unwrap()
            .with("add", PortUsage::single(ps(&[0, 1, 5, 6])))
            .unwrap();
        assert_eq!(port_count("add", &harness(skl)).unwrap(), 4);
    }

    struct Fixed(f64);
    impl MeasurementBackend for Fixed {
        fn raw_measure(&self, _: &Experiment) -> Result<RawObservation, BackendError> {
            Ok(RawObservation { cycles: self.0, uops: 1 })
        }
    }

    #[test]
    fn non_integral_port_count() {
        let h = Harness::new(Arc::new(Fixed(0.37)), MeasureConfig::default());
        assert!(matches!(
            port_count("x", &h),
            Err(BlockingError::NonIntegralPortCount { .. })
        ));
    }

    #[test]
    fn equivalence_by_additivity() {
        let m = PortMapping::new(3)
            .unwrap()
            .with("a", PortUsage::single(ps(&[1])))
            .unwrap()
            .with("b", PortUsage::single(ps(&[1])))
            .unwrap()
            .with("c", PortUsage::single(ps(&[2])))
            .unwrap()
            .with("d", PortUsage::single(ps(&[0, 1])))
            .unwrap()
            .with("e", PortUsage::single(ps(&[1, 2])))
            .unwrap();
        let h = harness(m);
        assert!(equivalent("a", "b", &h).unwrap());
        assert!(equivalent("b", "a", &h).unwrap());
        assert!(!equivalent("a", "c", &h).unwrap());
        assert!(equivalent("a", "a", &h).unwrap());
        // Partially overlapping sets land strictly between max and sum.
        assert!(!equivalent("d", "e", &h).unwrap());
    }

    #[test]
    fn fma_example_classes() {
        let h = harness(fma_example());
        let r = select_representatives(&ids(&["add", "mul"]), &h).unwrap();
        assert_eq!(
            r.classes,
            vec![
                BlockingClass {
                    representative: "mul".into(),
                    members: ids(&["mul"]),
                    port_count: 1
                },
                BlockingClass {
                    representative: "add".into(),
                    members: ids(&["add"]),
                    port_count: 2
                },
            ]
        );
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn copies_collapse_into_one_class() {
        let mut m = PortMapping::new(4).unwrap();
        for id in ["v", "w", "x", "y", "z"] {
            m.insert(id, PortUsage::single(ps(&[0, 2]))).unwrap();
        }
        let r = select_representatives(&ids(&["z", "y", "x", "w", "v"]), &harness(m)).unwrap();
        assert_eq!(r.classes.len(), 1);
        assert_eq!(r.classes[0].representative, "v");
        assert_eq!(r.classes[0].members.len(), 5);
    }

    #[test]
    fn non_integral_candidates_are_excluded() {
        // 2 ports, but clipped so that tp([i]) = 1/1.5.
        let m = PortMapping::new(3)
            .unwrap()
            .with("odd", PortUsage::single(ps(&[0, 1])))
            .unwrap()
            .with("ok", PortUsage::single(ps(&[2])))
            .unwrap();
        let backend = SimulatedBackend::new(
            m,
            SimConfig {
                r_max: Some(num_rational::Ratio::new(3, 2)),
                ..SimConfig::default()
            },
        );
        let h = Harness::new(Arc::new(backend), MeasureConfig::default());
        let r = select_representatives(&ids(&["odd", "ok"]), &h).unwrap();
        assert_eq!(r.classes.len(), 1);
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.excluded[0].id, "odd");
    }
}
