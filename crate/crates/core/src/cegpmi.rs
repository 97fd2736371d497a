//! Counter-example-guided inference of the blocking instructions' ports.
//!
//! Starting from singleton measurements, the driver alternates between
//! finding a mapping that explains every measurement so far and asking the
//! solver for a second explaining mapping plus an experiment that tells the
//! two apart. Each such experiment is measured and added to the evidence.
//! Distinguishing experiments are searched by increasing size: first single
//! instructions, then pairs, and so on up to the number of instructions, then
//! a final stage limited only by the per-instruction multiplicity bound.
//! Inference ends when the final stage finds nothing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{FormatError, MappingDoc};
use crate::mapping::{Experiment, PortMapping};
use crate::measure::{Harness, MeasureError};
use crate::solver::{find_mapping, find_other_mapping, SolverConfig, SolverError};

pub const STATE_SCHEMA: &str = "pmwb-cegpmi-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub counts: BTreeMap<String, u32>,
    pub cycles: f64,
}

/// One `find_other_mapping` round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptEntry {
    pub m1: MappingDoc,
    pub m2: Option<MappingDoc>,
    #[serde(rename = "newExp")]
    pub new_exp: Option<BTreeMap<String, u32>>,
    pub cycles: Option<f64>,
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CegpmiState {
    pub schema: String,
    pub exps: Vec<Observation>,
    /// Size bound of the current stage; ignored once `final_stage` is set.
    pub size_bound: u32,
    pub final_stage: bool,
    pub iterations: u64,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid state file: {0}")]
    Format(String),
    #[error(transparent)]
    Mapping(#[from] FormatError),
}

impl CegpmiState {
    pub fn new() -> Self {
        CegpmiState {
            schema: STATE_SCHEMA.to_string(),
            exps: Vec::new(),
            size_bound: 1,
            final_stage: false,
            iterations: 0,
            transcript: Vec::new(),
        }
    }

    pub fn experiments(&self) -> Result<Vec<(Experiment, f64)>, StateError> {
        self.exps
            .iter()
            .enumerate()
            .map(|(n, o)| Ok((crate::format::experiment_from_counts(n, &o.counts)?, o.cycles)))
            .collect()
    }

    fn contains(&self, e: &Experiment) -> bool {
        self.exps.iter().any(|o| &o.counts == e.counts())
    }

    fn push(&mut self, e: &Experiment, cycles: f64) {
        self.exps.push(Observation {
            counts: e.counts().clone(),
            cycles,
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, StateError> {
        let s: CegpmiState = serde_json::from_str(text).map_err(|e| StateError::Format(e.to_string()))?;
        if s.schema != STATE_SCHEMA {
            return Err(StateError::Format(format!("unsupported schema `{}`", s.schema)));
        }
        if s.size_bound == 0 {
            return Err(StateError::Format("size_bound must be positive".into()));
        }
        if let Some(o) = s.exps.iter().find(|o| !o.cycles.is_finite() || o.cycles < 0.0) {
            return Err(StateError::Format(format!("invalid cycle count {}", o.cycles)));
        }
        s.experiments()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), StateError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StateError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The transcript as JSON lines.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.transcript {
            out.push_str(&serde_json::to_string(t).expect("transcript serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_transcript(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.transcript_jsonl().as_bytes())
    }
}

impl Default for CegpmiState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Error)]
pub enum CegpmiFailure {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("nothing to infer")]
    NoInstructions,
}

/// An aborted run together with the state to resume it from.
#[derive(Debug, Error)]
#[error("core inference aborted after {} iterations: {source}", state.iterations)]
pub struct CegpmiError {
    #[source]
    pub source: CegpmiFailure,
    pub state: Box<CegpmiState>,
}

#[derive(Debug, Clone)]
pub struct CegpmiOutcome {
    /// `None` when no single-μop mapping explains the measurements.
    pub mapping: Option<PortMapping>,
    pub state: CegpmiState,
}

/// Infers ports for every instruction in `cfg.scope()`, measuring on `h`.
pub fn infer_core_mapping(h: &Harness, cfg: &SolverConfig) -> Result<CegpmiOutcome, CegpmiError> {
    resume(CegpmiState::new(), h, cfg)
}

/// Continues a run from `state`. Missing singleton measurements are taken
/// first.
pub fn resume(mut state: CegpmiState, h: &Harness, cfg: &SolverConfig) -> Result<CegpmiOutcome, CegpmiError> {
    match run(&mut state, h, cfg) {
        Ok(mapping) => Ok(CegpmiOutcome { mapping, state }),
        Err(source) => Err(CegpmiError {
            source,
            state: Box::new(state),
        }),
    }
}

fn run(state: &mut CegpmiState, h: &Harness, cfg: &SolverConfig) -> Result<Option<PortMapping>, CegpmiFailure> {
    let scope = cfg.scope();
    if scope.is_empty() {
        return Err(CegpmiFailure::NoInstructions);
    }
    for id in &scope {
        let e = Experiment::singleton(id.as_str());
        if !state.contains(&e) {
            let cycles = h.cycles(&e)?;
            state.push(&e, cycles);
        }
    }
    let last_bounded = u32::try_from(scope.len()).unwrap_or(u32::MAX);

    loop {
        let exps = state.experiments()?;
        let Some(m1) = find_mapping(&exps, cfg)? else {
            log::info!("no mapping explains the {} measurements", exps.len());
            return Ok(None);
        };
        let bound = (!state.final_stage).then_some(state.size_bound);
        let found = find_other_mapping(&exps, &m1, cfg, bound)?;
        state.iterations += 1;
        let mut entry = TranscriptEntry {
            m1: MappingDoc::from_mapping(&m1),
            m2: None,
            new_exp: None,
            cycles: None,
        };
        let measured = match found {
            Some((m2, e)) => {
                entry.m2 = Some(MappingDoc::from_mapping(&m2));
                entry.new_exp = Some(e.counts().clone());
                if state.contains(&e) {
                    log::warn!("solver proposed already measured experiment {e}");
                    None
                } else {
                    let cycles = h.cycles(&e)?;
                    entry.cycles = Some(cycles);
                    Some((e, cycles))
                }
            }
            None => None,
        };
        state.transcript.push(entry);
        match measured {
            Some((e, cycles)) => {
                log::debug!("iteration {}: {e} takes {cycles} cycles", state.iterations);
                state.push(&e, cycles);
            }
            None if state.final_stage => return Ok(Some(m1)),
            None if state.size_bound >= last_bounded => state.final_stage = true,
            None => state.size_bound += 1,
        }
    }
}
