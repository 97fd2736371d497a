use super::*;
use crate::mapping::tests::{fma_example, ps};
use crate::smt::SmtSession;
use crate::vcpu::bottleneck_throughput;

fn solver_command() -> String {
    std::env::var("PMWB_SOLVER").unwrap_or_else(|_| DEFAULT_SOLVER.to_string())
}

fn counts(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
    pairs.iter().map(|&(id, n)| (id.to_string(), n)).collect()
}

fn cfg(n_ports: usize, pairs: &[(&str, u32)]) -> SolverConfig {
    let mut c = SolverConfig::new(n_ports, counts(pairs));
    c.solver_command = solver_command();
    c.timeout = Duration::from_secs(60);
    c
}

/// Ports p1, p2 of the two-instruction example are 0 and 1.
fn split_pair() -> PortMapping {
    PortMapping::new(2)
        .unwrap()
        .with("iA", PortUsage::single(ps(&[0])))
        .unwrap()
        .with("iB", PortUsage::single(ps(&[1])))
        .unwrap()
}

fn shared_pair() -> PortMapping {
    PortMapping::new(2)
        .unwrap()
        .with("iA", PortUsage::single(ps(&[0])))
        .unwrap()
        .with("iB", PortUsage::single(ps(&[0])))
        .unwrap()
}

fn singletons_1() -> Vec<(Experiment, f64)> {
    vec![(Experiment::singleton("iA"), 1.0), (Experiment::singleton("iB"), 1.0)]
}

/// The value of `t` forced by the throughput constraints for a hardwired
/// mapping and experiment, asserting that no other value is possible.
fn forced_t(m: &PortMapping, e: &Experiment, r_max: Option<Ratio<i64>>) -> BigRational {
    let scope: Vec<String> = m.instructions().map(str::to_string).collect();
    let menc = MappingEncoding::hardwired(m, &scope).unwrap();
    let mut script = Script::default();
    let tenc = emit_relate_throughput(&menc, &ExperimentEncoding::hardwired(e), "r0", r_max, &mut script).unwrap();
    check_linear(&script.commands).unwrap();
    let mut s = SmtSession::spawn(&solver_command(), Duration::from_secs(60)).unwrap();
    for c in &script.commands {
        s.send(c).unwrap();
    }
    assert_eq!(s.check().unwrap(), CheckResult::Sat);
    let t = s.get_values(std::slice::from_ref(&tenc.t)).unwrap()[&tenc.t].as_rational().unwrap();
    s.assert(&format!("(not (= {} {}))", tenc.t, smt_real(&t))).unwrap();
    assert_eq!(s.check().unwrap(), CheckResult::Unsat, "t is not unique");
    t
}

fn q(n: i64, d: i64) -> BigRational {
    big(Ratio::new(n, d))
}

#[test]
fn relate_throughput_pair() {
    let e = Experiment::from_pairs([("iA", 1), ("iB", 1)]);
    assert_eq!(forced_t(&split_pair(), &e, None), q(1, 1));
    assert_eq!(forced_t(&shared_pair(), &e, None), q(2, 1));
}

#[test]
fn relate_throughput_fma_example() {
    let m = fma_example();
    assert_eq!(forced_t(&m, &Experiment::from_pairs([("mul", 2), ("fma", 1)]), None), q(3, 1));
    assert_eq!(forced_t(&m, &Experiment::from_pairs([("mul", 3), ("fma", 1)]), None), q(4, 1));
    assert_eq!(forced_t(&m, &Experiment::from_pairs([("add", 6), ("fma", 1)]), None), q(9, 2));
}

#[test]
fn relate_throughput_agrees_with_bottleneck_model() {
    let m = PortMapping::new(3)
        .unwrap()
        .with("a", PortUsage::single(ps(&[0, 1])))
        .unwrap()
        .with("b", PortUsage::from_entries(vec![(ps(&[1, 2]), 2), (ps(&[2]), 1)]))
        .unwrap()
        .with("c", PortUsage::single(ps(&[0, 1, 2])))
        .unwrap();
    for e in [
        Experiment::from_pairs([("a", 3), ("b", 1)]),
        Experiment::from_pairs([("b", 2), ("c", 5)]),
        Experiment::from_pairs([("a", 1), ("b", 1), ("c", 1)]),
    ] {
        assert_eq!(forced_t(&m, &e, None), big(bottleneck_throughput(&m, &e).unwrap()), "{e}");
    }
}

#[test]
fn relate_throughput_clipped() {
    let m = PortMapping::new(4)
        .unwrap()
        .with("i", PortUsage::single(ps(&[0, 1, 2, 3])))
        .unwrap();
    let e = Experiment::from_pairs([("i", 4)]);
    assert_eq!(forced_t(&m, &e, Some(Ratio::from_integer(2))), q(2, 1));
    assert_eq!(forced_t(&m, &e, Some(Ratio::from_integer(8))), q(1, 1));
}

#[test]
fn find_mapping_pair_singletons() {
    let c = cfg(2, &[("iA", 1), ("iB", 1)]);
    let m = find_mapping(&singletons_1(), &c).unwrap().unwrap();
    for id in ["iA", "iB"] {
        assert_eq!(m.usage(id).unwrap().entries().len(), 1);
        assert_eq!(m.usage(id).unwrap().entries()[0].0.len(), 1);
    }
}

#[test]
fn find_mapping_rejects_impossible_measurements() {
    let c = cfg(2, &[("iA", 1)]);
    assert!(find_mapping(&[(Experiment::singleton("iA"), 0.5)], &c).unwrap().is_none());
}

#[test]
fn find_mapping_fma_example_blockers() {
    let truth = fma_example().restrict(["add", "mul"]).unwrap();
    let exps: Vec<(Experiment, f64)> = [
        Experiment::singleton("add"),
        Experiment::singleton("mul"),
        Experiment::from_pairs([("add", 1), ("mul", 1)]),
        Experiment::from_pairs([("add", 2), ("mul", 2)]),
    ]
    .into_iter()
    .map(|e| {
        let t = bottleneck_throughput(&truth, &e).unwrap();
        (e, crate::exact::ratio64_to_f64(t))
    })
    .collect();
    let c = cfg(2, &[("add", 2), ("mul", 1)]);
    let m = find_mapping(&exps, &c).unwrap().unwrap();
    assert!(m.equal_up_to_port_renaming(&truth), "{m:?}");
}

#[test]
fn find_other_mapping_pair() {
    let c = cfg(2, &[("iA", 1), ("iB", 1)]);
    let (m2, e) = find_other_mapping(&singletons_1(), &split_pair(), &c, Some(2)).unwrap().unwrap();
    assert_eq!(e, Experiment::from_pairs([("iA", 1), ("iB", 1)]));
    assert!(m2.equal_up_to_port_renaming(&shared_pair()));
    assert!(find_other_mapping(&singletons_1(), &split_pair(), &c, Some(1)).unwrap().is_none());
}

#[test]
fn find_other_mapping_single_instruction() {
    let c = cfg(3, &[("i", 2)]);
    let m1 = PortMapping::new(3).unwrap().with("i", PortUsage::single(ps(&[0, 1]))).unwrap();
    let exps = vec![(Experiment::singleton("i"), 0.5)];
    assert!(find_other_mapping(&exps, &m1, &c, None).unwrap().is_none());
}

#[test]
fn find_other_mapping_with_clipping() {
    // With an IPC limit of 1, every experiment takes |e| cycles and nothing
    // can be distinguished.
    let mut c = cfg(2, &[("iA", 1), ("iB", 1)]);
    c.r_max = Some(Ratio::from_integer(1));
    assert!(find_other_mapping(&singletons_1(), &split_pair(), &c, None).unwrap().is_none());
}

#[test]
fn improper_blocker() {
    let truth = PortMapping::new(3)
        .unwrap()
        .with("a", PortUsage::single(ps(&[0])))
        .unwrap()
        .with("b", PortUsage::single(ps(&[1, 2])))
        .unwrap()
        .with("x", PortUsage::from_entries(vec![(ps(&[0]), 1), (ps(&[1, 2]), 1)]))
        .unwrap();
    let exps: Vec<(Experiment, f64)> = [
        Experiment::singleton("a"),
        Experiment::singleton("b"),
        Experiment::singleton("x"),
        Experiment::from_pairs([("a", 1), ("x", 1)]),
        Experiment::from_pairs([("b", 2), ("x", 1)]),
    ]
    .into_iter()
    .map(|e| {
        let t = bottleneck_throughput(&truth, &e).unwrap();
        (e, crate::exact::ratio64_to_f64(t))
    })
    .collect();
    let mut c = cfg(3, &[("a", 1), ("b", 2)]);
    c.improper_blockers = vec![ImproperSpec {
        insn: "x".into(),
        shared_with: "a".into(),
    }];
    let m = find_mapping(&exps, &c).unwrap().unwrap();
    let x = m.usage("x").unwrap();
    assert_eq!(x.uop_count(), 2);
    assert_eq!(x.multiplicity(m.usage("a").unwrap().entries()[0].0), 1);
    // x's second μop on {1}, {2} or {1, 2} is indistinguishable here.
    assert!(x.entries().iter().all(|(ps, _)| ps.len() <= 2));
}

#[test]
fn improper_blocker_must_share_with_a_proper_one() {
    let mut c = cfg(2, &[("a", 1)]);
    c.improper_blockers = vec![ImproperSpec {
        insn: "x".into(),
        shared_with: "zzz".into(),
    }];
    let exps = vec![(Experiment::singleton("a"), 1.0)];
    assert!(matches!(find_mapping_script(&exps, &c), Err(SolverError::Encoding(_))));
}

#[test]
fn encoding_errors() {
    let c = cfg(2, &[("iA", 1)]);
    let exps = vec![(Experiment::singleton("iB"), 1.0)];
    assert!(matches!(find_mapping(&exps, &c), Err(SolverError::UnknownInstruction(id)) if id == "iB"));
    let menc = MappingEncoding::free(&["iA".to_string()], 2, &BTreeMap::new(), &[], &mut Script::default());
    assert!(matches!(menc, Err(SolverError::MissingPortCount(id)) if id == "iA"));
}

#[test]
fn scripts_are_linear() {
    let mut c = cfg(2, &[("iA", 1), ("iB", 1)]);
    c.r_max = Some(Ratio::new(3, 2));
    let (s, ..) = find_other_mapping_script(&singletons_1(), &split_pair(), &c, Some(3)).unwrap();
    check_linear(&s.commands).unwrap();
    let (s, _) = find_mapping_script(&singletons_1(), &c).unwrap();
    check_linear(&s.commands).unwrap();
    assert!(check_linear(&["(assert (= (* x y) 1.0))".to_string()]).is_err());
    assert!(check_linear(&["(assert (= (/ 1.0 y) 1.0))".to_string()]).is_err());
    assert!(check_linear(&["(assert (= (* 2.0 (to_real y)) 1.0))".to_string()]).is_ok());
}

#[test]
fn find_other_script_snapshot() {
    let c = cfg(2, &[("iA", 1), ("iB", 1)]);
    let (s, ..) = find_other_mapping_script(&singletons_1(), &split_pair(), &c, Some(2)).unwrap();
    let text = s.commands.join("\n") + "\n";
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/pair_find_other.smt2");
    if std::env::var_os("PMWB_BLESS").is_some() {
        std::fs::write(path, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(path).unwrap());
}

#[test]
fn transcript_is_appended() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(2, &[("iA", 1), ("iB", 1)]);
    c.transcript = Some(dir.path().join("queries.smt2"));
    find_mapping(&singletons_1(), &c).unwrap().unwrap();
    find_other_mapping(&singletons_1(), &split_pair(), &c, Some(1)).unwrap();
    let text = std::fs::read_to_string(dir.path().join("queries.smt2")).unwrap();
    assert!(text.starts_with("; find_mapping\n(set-option :print-success true)\n"));
    assert!(text.contains("\n; find_other_mapping size_bound=1\n"));
    assert_eq!(text.matches("(check-sat)").count(), 2);
}

#[test]
fn exact_rechecks() {
    let c = cfg(2, &[("iA", 1), ("iB", 1)]);
    let e = Experiment::from_pairs([("iA", 1), ("iB", 1)]);
    check_gap(&split_pair(), &shared_pair(), &e, &c).unwrap();
    assert!(matches!(
        check_gap(&split_pair(), &shared_pair(), &Experiment::singleton("iA"), &c),
        Err(SolverError::Unsound(_))
    ));
    check_explains(&split_pair(), &singletons_1(), &c).unwrap();
    // The band is strict: 1.02 is exactly ε away from 1.0.
    assert!(check_explains(&split_pair(), &[(Experiment::singleton("iA"), 1.02)], &c).is_err());
    check_explains(&split_pair(), &[(Experiment::singleton("iA"), 1.019)], &c).unwrap();
}

#[test]
fn solver_failures_are_not_unsat() {
    let mut c = cfg(2, &[("iA", 1), ("iB", 1)]);
    c.solver_command = "/nonexistent/solver".into();
    assert!(matches!(find_mapping(&singletons_1(), &c), Err(SolverError::Smt(SmtError::Spawn { .. }))));
}
