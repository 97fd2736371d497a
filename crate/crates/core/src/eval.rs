//! Random instances, observational equivalence, and prediction accuracy.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::Signed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{big, decimal_ratio, ratio64_to_f64};
use crate::mapping::{Experiment, MappingError, PortMapping, PortSet, PortUsage};
use crate::measure::{Harness, MeasureError};
use crate::vcpu::{bottleneck_throughput, clipped_throughput};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mappings cover different instructions: {0}")]
    ScopeMismatch(String),
    #[error("model predicts zero cycles for {0}")]
    ZeroThroughputModel(Experiment),
    #[error("empty experiment")]
    EmptyExperiment,
    #[error("{pred} predictions but {meas} measurements")]
    LengthMismatch { pred: usize, meas: usize },
    #[error("at least two samples are needed, got {0}")]
    TooFewSamples(usize),
    #[error("measurement {index} is {value}, not positive")]
    NonPositiveMeasurement { index: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn insn_names(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("i{i:0width$}")).collect()
}

/// A mapping of `n_insns` instructions (`i0`, `i1`, ...), each with
/// `1..=max_uops` μops on uniformly random nonempty port sets.
pub fn gen_random_mapping(n_insns: usize, n_ports: usize, max_uops: u32, seed: u64) -> Result<PortMapping, EvalError> {
    if n_insns == 0 || max_uops == 0 {
        return Err(EvalError::InvalidArgument("instruction and μop counts must be positive".into()));
    }
    let mut m = PortMapping::new(n_ports)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = PortSet::all(n_ports).bits();
    for id in insn_names(n_insns) {
        let n = rng.random_range(1..=max_uops);
        let entries = (0..n)
            .map(|_| (PortSet::from_bits(rng.random_range(1..=full)), 1))
            .collect();
        m.insert(id, PortUsage::from_entries(entries).canonical())?;
    }
    Ok(m)
}

/// `m` plus one single-μop blocking instruction (`blk_<ports>`) for every port
/// set used by a μop that no existing single-μop instruction covers exactly.
/// Returns the extended mapping and the ids of all blocking instructions.
pub fn with_blocking_suite(m: &PortMapping) -> Result<(PortMapping, Vec<String>), EvalError> {
    let mut out = m.clone();
    let mut blockers: BTreeMap<PortSet, String> = BTreeMap::new();
    for (id, u) in m.iter() {
        if let [(ps, 1)] = u.entries() {
            blockers.entry(*ps).or_insert_with(|| id.to_string());
        }
    }
    let needed: BTreeSet<PortSet> = m.iter().flat_map(|(_, u)| u.entries().iter().map(|&(ps, _)| ps)).collect();
    for ps in needed {
        if let Entry::Vacant(slot) = blockers.entry(ps) {
            let name = format!("blk_{}", ps.ports().map(|p| p.to_string()).collect::<Vec<_>>().join("_"));
            out.insert(name.clone(), PortUsage::single(ps))?;
            slot.insert(name);
        }
    }
    let mut ids: Vec<String> = blockers.into_values().collect();
    ids.sort();
    Ok((out, ids))
}

/// `count` experiments of `block_size` instructions drawn uniformly with
/// repetition from `insns`.
pub fn gen_random_blocks(insns: &[String], count: usize, block_size: u32, seed: u64) -> Result<Vec<Experiment>, EvalError> {
    if insns.is_empty() || block_size == 0 {
        return Err(EvalError::InvalidArgument("need instructions and a positive block size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut e = Experiment::new();
            for _ in 0..block_size {
                e.add(insns[rng.random_range(0..insns.len())].clone(), 1);
            }
            e
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpcPrediction {
    /// Instructions per cycle, limited by `r_max` when given.
    pub ipc: f64,
    /// Instructions per cycle from the port mapping alone.
    pub unclipped_ipc: f64,
}

/// Predicted instructions per cycle of `e` under `m`.
pub fn predict_ipc(m: &PortMapping, e: &Experiment, r_max: Option<Ratio<i64>>) -> Result<IpcPrediction, EvalError> {
    if e.is_empty() {
        return Err(EvalError::EmptyExperiment);
    }
    let t = bottleneck_throughput(m, e)?;
    if t == Ratio::from_integer(0) {
        return Err(EvalError::ZeroThroughputModel(e.clone()));
    }
    let size = Ratio::from_integer(e.size() as i64);
    let clipped = clipped_throughput(m, e, r_max)?;
    Ok(IpcPrediction {
        ipc: ratio64_to_f64(size / clipped),
        unclipped_ipc: ratio64_to_f64(size / t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Mean absolute percentage error against the measurements.
    pub mape: f64,
    /// Pearson correlation; NaN (`null` in JSON) if a sequence is constant.
    pub pcc: f64,
    /// Kendall's tau-b; NaN (`null` in JSON) if a sequence is constant.
    pub kendall_tau: f64,
    pub n: usize,
}

/// MAPE, Pearson and Kendall tau-b of predictions against measurements.
pub fn metrics(pred: &[f64], meas: &[f64]) -> Result<AccuracyReport, EvalError> {
    if pred.len() != meas.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            meas: meas.len(),
        });
    }
    let n = pred.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    if let Some((index, &value)) = meas.iter().enumerate().find(|(_, &m)| !(m > 0.0 && m.is_finite())) {
        return Err(EvalError::NonPositiveMeasurement { index, value });
    }
    let mape = pred.iter().zip(meas).map(|(p, m)| (p - m).abs() / m).sum::<f64>() / n as f64 * 100.0;
    Ok(AccuracyReport {
        mape,
        pcc: pearson(pred, meas),
        kendall_tau: kendall_tau_b(pred, meas),
        n,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).unwrap_or(std::cmp::Ordering::Equal);
            let dy = y[i].partial_cmp(&y[j]).unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => ties_x += 1,
                (_, Equal) => ties_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_x) as f64;
    let n2 = (concordant + discordant + ties_y) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return f64::NAN;
    }
    (concordant - discordant) as f64 / (n1 * n2).sqrt()
}

/// Calls `f` with every multiset of size `size` over `ids`, in lexicographic
/// order of the sorted id sequence. Stops early when `f` returns `true`.
fn for_each_multiset(ids: &[String], size: u32, f: &mut dyn FnMut(&Experiment) -> Result<bool, EvalError>) -> Result<bool, EvalError> {
    fn go(
        ids: &[String],
        start: usize,
        left: u32,
        e: &mut Experiment,
        f: &mut dyn FnMut(&Experiment) -> Result<bool, EvalError>,
    ) -> Result<bool, EvalError> {
        if left == 0 {
            return f(e);
        }
        for i in start..ids.len() {
            let mut next = e.clone().with(ids[i].clone(), 1);
            if go(ids, i, left - 1, &mut next, f)? {
                *e = next;
                return Ok(true);
            }
        }
        Ok(false)
    }
    go(ids, 0, size, &mut Experiment::new(), f)
}

/// The first experiment of size `1..=max_size` on which the clipped inverse
/// throughputs of `m1` and `m2` differ by more than `2·epsilon·|e|`, ordered
/// by size and then lexicographically; `None` if they agree on all of them.
pub fn observational_equivalence(
    m1: &PortMapping,
    m2: &PortMapping,
    r_max: Option<Ratio<i64>>,
    max_size: u32,
    epsilon: f64,
) -> Result<Option<Experiment>, EvalError> {
    let ids: Vec<String> = m1.instructions().map(str::to_string).collect();
    if m2.instructions().ne(ids.iter().map(String::as_str)) {
        let theirs: Vec<&str> = m2.instructions().collect();
        return Err(EvalError::ScopeMismatch(format!("{ids:?} vs {theirs:?}")));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(EvalError::InvalidArgument(format!("epsilon {epsilon}")));
    }
    let two_eps = decimal_ratio(epsilon) * BigRational::from_integer(BigInt::from(2));
    let mut witness = None;
    for size in 1..=max_size {
        let found = for_each_multiset(&ids, size, &mut |e| {
            let t1 = big(clipped_throughput(m1, e, r_max)?);
            let t2 = big(clipped_throughput(m2, e, r_max)?);
            let gap = &two_eps * BigRational::from_integer(BigInt::from(e.size()));
            if (t1 - t2).abs() > gap {
                witness = Some(e.clone());
                return Ok(true);
            }
            Ok(false)
        })?;
        if found {
            break;
        }
    }
    Ok(witness)
}

/// `(measured_bucket, predicted_bucket) -> count` with buckets
/// `[k·w, (k+1)·w)`.
pub fn heatmap(pred: &[f64], meas: &[f64], bucket_width: f64) -> Result<BTreeMap<(i64, i64), u64>, EvalError> {
    if pred.len() != meas.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            meas: meas.len(),
        });
    }
    if !(bucket_width > 0.0 && bucket_width.is_finite()) {
        return Err(EvalError::InvalidArgument(format!("bucket width {bucket_width}")));
    }
    let mut cells = BTreeMap::new();
    for (p, m) in pred.iter().zip(meas) {
        let bucket = |v: f64| (v / bucket_width).floor() as i64;
        *cells.entry((bucket(*m), bucket(*p))).or_insert(0) += 1;
    }
    Ok(cells)
}

pub fn heatmap_csv(pred: &[f64], meas: &[f64], bucket_width: f64) -> Result<String, EvalError> {
    let mut out = String::from("measured_bucket,predicted_bucket,count\n");
    for ((m, p), n) in heatmap(pred, meas, bucket_width)? {
        out.push_str(&format!("{m},{p},{n}\n"));
    }
    Ok(out)
}

pub fn heatmap_export(pred: &[f64], meas: &[f64], bucket_width: f64, path: &Path) -> Result<(), EvalError> {
    let csv = heatmap_csv(pred, meas, bucket_width)?;
    std::fs::File::create(path)?.write_all(csv.as_bytes())?;
    Ok(())
}

/// Predictions of `inferred` against measurements on `truth`, as IPC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: AccuracyReport,
    pub predicted_ipc: Vec<f64>,
    pub measured_ipc: Vec<f64>,
}

/// Predicts each block with `inferred` (clipped by `r_max`) and measures it
/// on `truth`.
pub fn evaluate(
    inferred: &PortMapping,
    truth: &Harness,
    blocks: &[Experiment],
    r_max: Option<Ratio<i64>>,
) -> Result<Evaluation, EvalError> {
    let mut predicted_ipc = Vec::with_capacity(blocks.len());
    let mut measured_ipc = Vec::with_capacity(blocks.len());
    for e in blocks {
        predicted_ipc.push(predict_ipc(inferred, e, r_max)?.ipc);
        measured_ipc.push(e.size() as f64 / truth.cycles(e)?);
    }
    Ok(Evaluation {
        report: metrics(&predicted_ipc, &measured_ipc)?,
        predicted_ipc,
        measured_ipc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::tests::{fma_example, ps};
    use proptest::prelude::*;

    fn pair(second_on_p2: bool) -> PortMapping {
        PortMapping::new(2)
            .unwrap()
            .with("iA", PortUsage::single(ps(&[0])))
            .unwrap()
            .with("iB", PortUsage::single(ps(&[usize::from(second_on_p2)])))
            .unwrap()
    }

    #[test]
    fn random_mappings() {
        let m = gen_random_mapping(1, 1, 1, 99).unwrap();
        assert_eq!(m.usage("i0").unwrap(), &PortUsage::single(ps(&[0])));
        assert_eq!(gen_random_mapping(8, 4, 3, 7).unwrap(), gen_random_mapping(8, 4, 3, 7).unwrap());
        let m = gen_random_mapping(8, 4, 3, 7).unwrap();
        assert_eq!(m.len(), 8);
        for (_, u) in m.iter() {
            assert!((1..=3).contains(&u.uop_count()));
            assert!(u.entries().iter().all(|(ps, _)| !ps.is_empty() && ps.fits(4)));
        }
        assert_eq!(gen_random_mapping(12, 2, 1, 0).unwrap().instructions().next(), Some("i00"));
    }

    #[test]
    fn blocking_suite_completion() {
        let (m, blockers) = with_blocking_suite(&fma_example()).unwrap();
        assert_eq!(m, fma_example());
        assert_eq!(blockers, ["add", "mul"]);
        let only_fma = fma_example().restrict(["fma"]).unwrap();
        let (m, blockers) = with_blocking_suite(&only_fma).unwrap();
        assert_eq!(blockers, ["blk_0_1", "blk_1"]);
        assert_eq!(m.usage("blk_0_1").unwrap(), &PortUsage::single(ps(&[0, 1])));
    }

    #[test]
    fn random_blocks() {
        let ids: Vec<String> = (0..577).map(|i| format!("s{i}")).collect();
        let b = gen_random_blocks(&ids, 5000, 5, 3).unwrap();
        assert_eq!(b.len(), 5000);
        assert!(b.iter().all(|e| e.size() == 5));
        assert_eq!(b, gen_random_blocks(&ids, 5000, 5, 3).unwrap());
        assert_eq!(
            gen_random_blocks(&["x".to_string()], 1, 1, 0).unwrap(),
            vec![Experiment::singleton("x")]
        );
    }

    #[test]
    fn ipc_predictions() {
        let p = predict_ipc(&fma_example(), &Experiment::from_pairs([("mul", 2), ("fma", 1)]), Some(Ratio::from_integer(5))).unwrap();
        assert_eq!(p.ipc, 1.0);
        let m = PortMapping::new(4).unwrap().with("i", PortUsage::single(ps(&[0, 1, 2, 3]))).unwrap();
        let e = Experiment::from_pairs([("i", 8)]);
        assert_eq!(predict_ipc(&m, &e, Some(Ratio::from_integer(5))).unwrap().ipc, 4.0);
        let clipped = predict_ipc(&m, &e, Some(Ratio::from_integer(2))).unwrap();
        assert_eq!((clipped.ipc, clipped.unclipped_ipc), (2.0, 4.0));
        assert!(matches!(predict_ipc(&m, &Experiment::new(), None), Err(EvalError::EmptyExperiment)));
    }

    /// Kendall tau-b straight from the definition, for cross-checking.
    fn tau_b_by_pairs(x: &[f64], y: &[f64]) -> f64 {
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        let (mut s, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..x.len() {
            for j in 0..x.len() {
                if i < j {
                    let a = sign(x[i] - x[j]);
                    let b = sign(y[i] - y[j]);
                    s += a * b;
                    tx += a * a;
                    ty += b * b;
                }
            }
        }
        s / (tx * ty).sqrt()
    }

    #[test]
    fn metric_examples() {
        let x = [1.0, 2.5, 2.0, 7.0];
        let r = metrics(&x, &x).unwrap();
        assert_eq!((r.mape, r.pcc, r.kendall_tau, r.n), (0.0, 1.0, 1.0, 4));
        let r = metrics(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r.kendall_tau - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.kendall_tau - tau_b_by_pairs(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).abs() < 1e-12);
        let r = metrics(&[2.0, 4.0], &[1.0, 2.0]).unwrap();
        assert!((r.mape - 100.0).abs() < 1e-12);
        assert!((r.pcc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_metrics() {
        let r = metrics(&[1.0, 1.0, 1.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!(r.pcc.is_nan() && r.kendall_tau.is_nan());
        assert!(r.mape > 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"pcc\":null"), "{json}");
        assert!(matches!(metrics(&[1.0], &[1.0]), Err(EvalError::TooFewSamples(1))));
        assert!(matches!(metrics(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(
            metrics(&[1.0, 2.0], &[1.0, 0.0]),
            Err(EvalError::NonPositiveMeasurement { index: 1, .. })
        ));
    }

    #[test]
    fn equivalence_pair() {
        let (a, b) = (pair(true), pair(false));
        assert_eq!(
            observational_equivalence(&a, &b, None, 2, 0.02).unwrap(),
            Some(Experiment::from_pairs([("iA", 1), ("iB", 1)]))
        );
        assert_eq!(observational_equivalence(&a, &b, None, 1, 0.02).unwrap(), None);
        assert_eq!(observational_equivalence(&a, &a, None, 4, 0.02).unwrap(), None);
        // Limited to one instruction per cycle, the two cannot be told apart.
        assert_eq!(observational_equivalence(&a, &b, Some(Ratio::from_integer(1)), 4, 0.02).unwrap(), None);
        let other = fma_example();
        assert!(matches!(
            observational_equivalence(&a, &other, None, 2, 0.02),
            Err(EvalError::ScopeMismatch(_))
        ));
    }

    #[test]
    fn enumeration_order() {
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mut seen = Vec::new();
        for_each_multiset(&ids, 2, &mut |e| {
            seen.push(e.to_string());
            Ok(false)
        })
        .unwrap();
        let expected: Vec<String> = [
            vec![("a", 2)],
            vec![("a", 1), ("b", 1)],
            vec![("a", 1), ("c", 1)],
            vec![("b", 2)],
            vec![("b", 1), ("c", 1)],
            vec![("c", 2)],
        ]
        .into_iter()
        .map(|p| Experiment::from_pairs(p).to_string())
        .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn heatmap_buckets() {
        assert_eq!(heatmap_csv(&[1.0], &[1.0], 0.5).unwrap(), "measured_bucket,predicted_bucket,count\n2,2,1\n");
        assert_eq!(heatmap_csv(&[], &[], 0.5).unwrap(), "measured_bucket,predicted_bucket,count\n");
        assert_eq!(heatmap_csv(&[0.49, 0.5], &[0.0, 0.0], 0.5).unwrap().lines().count(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        heatmap_export(&[1.0, 1.2], &[3.0, 0.1], 1.0, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "measured_bucket,predicted_bucket,count\n0,1,1\n3,1,1\n"
        );
    }

    proptest! {
        #[test]
        fn metric_invariances(v in prop::collection::vec((0.1f64..10.0, 0.1f64..10.0), 3..40), a in 0.5f64..3.0, b in -1.0f64..1.0) {
            let (pred, meas): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let r = metrics(&pred, &meas).unwrap();
            let affine: Vec<f64> = pred.iter().map(|p| a * p + b).collect();
            let cubed: Vec<f64> = pred.iter().map(|p| p * p * p).collect();
            let ra = metrics(&affine, &meas).unwrap();
            let rc = metrics(&cubed, &meas).unwrap();
            if r.pcc.is_finite() {
                prop_assert!((ra.pcc - r.pcc).abs() < 1e-9);
            }
            if r.kendall_tau.is_finite() {
                prop_assert_eq!(rc.kendall_tau, r.kendall_tau);
                prop_assert!((r.kendall_tau - tau_b_by_pairs(&pred, &meas)).abs() < 1e-12);
            }
        }

        #[test]
        fn heatmap_conserves_counts(v in prop::collection::vec((0.0f64..8.0, 0.0f64..8.0), 0..200), w in 0.05f64..2.0) {
            let (pred, meas): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let total: u64 = heatmap(&pred, &meas, w).unwrap().values().sum();
            prop_assert_eq!(total as usize, pred.len());
        }

        #[test]
        fn equivalence_is_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = gen_random_mapping(3, 3, 2, s1).unwrap();
            let b = gen_random_mapping(3, 3, 2, s2).unwrap();
            let ab = observational_equivalence(&a, &b, None, 3, 0.02).unwrap();
            let ba = observational_equivalence(&b, &a, None, 3, 0.02).unwrap();
            prop_assert_eq!(ab, ba);
        }
    }
}
