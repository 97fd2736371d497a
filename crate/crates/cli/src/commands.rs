//! The subcommands. Each returns its result and writes its artifacts under the
//! configured output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_rational::Ratio;
use pmwb::blocking::{find_candidates, select_representatives, BlockingError, BlockingReport};
use pmwb::cegpmi::{self, CegpmiState};
use pmwb::charmap::{characterize_all, BlockingSuite, CharacterizationReport};
use pmwb::eval::{self, gen_random_blocks, gen_random_mapping, heatmap_csv, observational_equivalence, with_blocking_suite, EvalError, Evaluation};
use pmwb::format::{decode_experiments, decode_mapping, encode_experiments, MappingDoc};
use pmwb::measure::{Harness, MeasurementLog, SimulatedBackend};
use pmwb::{Experiment, PortMapping};
use serde::Serialize;

use crate::config::WorkbenchConfig;
use crate::{read_file, sorted_json, write_file, CliError};

pub const MEASUREMENTS: &str = "measurements.jsonl";
pub const BLOCKING_REPORT: &str = "blocking.json";
pub const CORE_MAPPING: &str = "core_mapping.json";
pub const CHARACTERIZATION: &str = "characterization.json";
pub const FINAL_MAPPING: &str = "mapping.json";
pub const TRANSCRIPT: &str = "transcript.jsonl";
pub const STATE: &str = "cegpmi_state.json";
pub const SOLVER_LOG: &str = "solver.smt2";
pub const ACCURACY: &str = "accuracy.json";
pub const HEATMAP: &str = "heatmap.csv";

pub fn load_mapping(path: &Path) -> Result<PortMapping, CliError> {
    decode_mapping(&read_file(path)?).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn mapping_json(m: &PortMapping) -> String {
    sorted_json(&MappingDoc::from_mapping(m))
}

fn truth_harness(cfg: &WorkbenchConfig, truth: PortMapping) -> Harness {
    Harness::new(Arc::new(SimulatedBackend::new(truth, cfg.sim.clone())), cfg.measure.clone())
}

fn backend<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Backend(format!("{stage}: {e}"))
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::ScopeMismatch(s) => CliError::ScopeMismatch(s),
        EvalError::Measure(e) => CliError::Backend(e.to_string()),
        e => CliError::Usage(e.to_string()),
    }
}

fn check_scope(experiments: &[Experiment], m: &PortMapping, path: &Path) -> Result<(), CliError> {
    for (index, e) in experiments.iter().enumerate() {
        if let Some(id) = e.instructions().find(|id| !m.contains(id)) {
            return Err(CliError::Input {
                path: path.to_path_buf(),
                msg: format!("experiment {index}: unknown instruction `{id}`"),
            });
        }
    }
    Ok(())
}

/// Measures every experiment in `experiments` on the simulated ground truth
/// and writes the measurement log.
pub fn cmd_simulate(cfg: &WorkbenchConfig, experiments: &Path) -> Result<MeasurementLog, CliError> {
    let truth = load_mapping(cfg.mapping_path()?)?;
    let exps = decode_experiments(&read_file(experiments)?).map_err(|e| CliError::Input {
        path: experiments.to_path_buf(),
        msg: e.to_string(),
    })?;
    check_scope(&exps, &truth, experiments)?;
    let h = truth_harness(cfg, truth);
    let mut log = MeasurementLog::default();
    for e in &exps {
        log.entries.push(h.measure(e).map_err(backend("measurement"))?);
    }
    write_file(&cfg.out.join(MEASUREMENTS), &log.to_jsonl())?;
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct InferOutput {
    pub blocking: BlockingReport,
    pub core: PortMapping,
    pub characterization: CharacterizationReport,
    /// Core mapping overlaid with every characterized instruction.
    pub mapping: PortMapping,
    pub state: CegpmiState,
}

fn write_state(out: &Path, state: &CegpmiState) -> Result<(), CliError> {
    write_file(&out.join(STATE), &sorted_json(state))?;
    let lines: String = state
        .transcript
        .iter()
        .map(|t| {
            let v = serde_json::to_value(t).expect("transcript serializes");
            serde_json::to_string(&v).expect("transcript serializes") + "\n"
        })
        .collect();
    write_file(&out.join(TRANSCRIPT), &lines)
}

/// Runs the whole pipeline against the simulated ground truth: blocking
/// candidates, representatives, core inference and characterization.
///
/// With `resume`, core inference continues from the saved state in the
/// output directory.
pub fn cmd_infer(cfg: &WorkbenchConfig, resume: bool) -> Result<InferOutput, CliError> {
    let truth = load_mapping(cfg.mapping_path()?)?;
    let insns: Vec<String> = match &cfg.infer.instructions {
        Some(ids) => {
            if let Some(id) = ids.iter().find(|id| !truth.contains(id)) {
                return Err(CliError::Usage(format!("infer.instructions names unknown instruction `{id}`")));
            }
            ids.clone()
        }
        None => truth.instructions().map(str::to_string).collect(),
    };
    let out = &cfg.out;
    let state = if resume {
        CegpmiState::load(&out.join(STATE)).map_err(|e| CliError::Input {
            path: out.join(STATE),
            msg: e.to_string(),
        })?
    } else {
        CegpmiState::new()
    };
    let h = truth_harness(cfg, truth);

    let blocking_err = |e: BlockingError| match e {
        BlockingError::NoInstructions => CliError::Usage(e.to_string()),
        e => CliError::Backend(format!("blocking: {e}")),
    };
    let candidates = find_candidates(&insns, &h).map_err(blocking_err)?;
    if candidates.is_empty() {
        return Err(CliError::Negative("no blocking candidates".into()));
    }
    let blocking = select_representatives(&candidates, &h).map_err(blocking_err)?;
    write_file(&out.join(BLOCKING_REPORT), &sorted_json(&blocking))?;
    log::info!("{} blocking classes", blocking.classes.len());

    let port_counts: BTreeMap<String, u32> =
        blocking.classes.iter().map(|c| (c.representative.clone(), c.port_count)).collect();
    let mut scfg = cfg.solver_config(port_counts)?;
    let solver_log = out.join(SOLVER_LOG);
    if !resume && solver_log.exists() {
        std::fs::remove_file(&solver_log).map_err(|source| CliError::Output {
            path: solver_log.clone(),
            source,
        })?;
    }
    scfg.transcript = Some(solver_log);
    let outcome = match cegpmi::resume(state, &h, &scfg) {
        Ok(o) => o,
        Err(e) => {
            write_state(out, &e.state)?;
            write_file(&out.join(MEASUREMENTS), &h.log().to_jsonl())?;
            return Err(CliError::Backend(format!("{e}; state saved to {}", out.join(STATE).display())));
        }
    };
    write_state(out, &outcome.state)?;
    let Some(core) = outcome.mapping else {
        write_file(&out.join(MEASUREMENTS), &h.log().to_jsonl())?;
        return Err(CliError::Negative(
            "no port mapping for the blocking instructions explains the measurements".into(),
        ));
    };
    write_file(&out.join(CORE_MAPPING), &mapping_json(&core))?;

    let representatives: Vec<String> = blocking.classes.iter().map(|c| c.representative.clone()).collect();
    let suite = BlockingSuite::from_core(&core, &representatives).map_err(backend("characterization"))?;
    let characterization = characterize_all(&insns, &suite, &h, &cfg.charmap_config(), cfg.infer.votes)
        .map_err(backend("characterization"))?;
    write_file(&out.join(CHARACTERIZATION), &sorted_json(&characterization))?;

    let mut mapping = core.clone();
    characterization
        .apply_to(&mut mapping)
        .map_err(backend("characterization"))?;
    write_file(&out.join(FINAL_MAPPING), &mapping_json(&mapping))?;
    write_file(&out.join(MEASUREMENTS), &h.log().to_jsonl())?;
    Ok(InferOutput {
        blocking,
        core,
        characterization,
        mapping,
        state: outcome.state,
    })
}

#[derive(Serialize)]
struct AccuracyDoc<'a> {
    report: &'a eval::AccuracyReport,
    blocks: usize,
    block_size: u32,
    seed: u64,
}

/// Compares predictions of `inferred` with measurements on `truth` (the
/// configured ground truth when `None`) over random blocks.
pub fn cmd_eval(cfg: &WorkbenchConfig, inferred: &Path, truth: Option<&Path>) -> Result<Evaluation, CliError> {
    let truth_path: PathBuf = match truth {
        Some(p) => p.to_path_buf(),
        None => cfg.mapping_path()?.to_path_buf(),
    };
    let model = load_mapping(inferred)?;
    let truth = load_mapping(&truth_path)?;
    let ids: Vec<String> = truth.instructions().map(str::to_string).collect();
    if model.instructions().ne(ids.iter().map(String::as_str)) {
        let theirs: Vec<&str> = model.instructions().collect();
        return Err(CliError::ScopeMismatch(format!(
            "{} covers {theirs:?}, {} covers {ids:?}",
            inferred.display(),
            truth_path.display()
        )));
    }
    let blocks = gen_random_blocks(&ids, cfg.eval.blocks, cfg.eval.block_size, cfg.seed).map_err(eval_error)?;
    let h = truth_harness(cfg, truth);
    let evaluation = eval::evaluate(&model, &h, &blocks, cfg.sim.r_max).map_err(eval_error)?;
    let csv = heatmap_csv(&evaluation.predicted_ipc, &evaluation.measured_ipc, cfg.eval.bucket_width).map_err(eval_error)?;
    write_file(
        &cfg.out.join(ACCURACY),
        &sorted_json(&AccuracyDoc {
            report: &evaluation.report,
            blocks: blocks.len(),
            block_size: cfg.eval.block_size,
            seed: cfg.seed,
        }),
    )?;
    write_file(&cfg.out.join(HEATMAP), &csv)?;
    Ok(evaluation)
}

/// The smallest experiment of size at most `max_size` telling the two
/// mappings apart, if any.
pub fn cmd_verify(
    a: &Path,
    b: &Path,
    max_size: u32,
    r_max: Option<Ratio<i64>>,
    epsilon: f64,
) -> Result<Option<Experiment>, CliError> {
    let (ma, mb) = (load_mapping(a)?, load_mapping(b)?);
    observational_equivalence(&ma, &mb, r_max, max_size, epsilon).map_err(eval_error)
}

/// A random mapping, optionally completed with a blocking instruction for
/// every port set it uses.
pub fn cmd_gen_mapping(
    n_insns: usize,
    n_ports: usize,
    max_uops: u32,
    seed: u64,
    blocking_suite: bool,
) -> Result<PortMapping, CliError> {
    let m = gen_random_mapping(n_insns, n_ports, max_uops, seed).map_err(eval_error)?;
    if blocking_suite {
        Ok(with_blocking_suite(&m).map_err(eval_error)?.0)
    } else {
        Ok(m)
    }
}

/// Random dependency-free blocks over the instructions of `m`.
pub fn cmd_gen_blocks(m: &PortMapping, count: usize, block_size: u32, seed: u64) -> Result<Vec<Experiment>, CliError> {
    let ids: Vec<String> = m.instructions().map(str::to_string).collect();
    gen_random_blocks(&ids, count, block_size, seed).map_err(eval_error)
}

pub fn experiments_json(exps: &[Experiment]) -> String {
    let v: serde_json::Value = serde_json::from_str(&encode_experiments(exps)).expect("experiments round-trip");
    sorted_json(&v)
}
