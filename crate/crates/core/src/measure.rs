//! Measurement backends, median aggregation and persistent measurement logs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::experiment_from_counts;
use crate::mapping::{Experiment, PortMapping};
use crate::vcpu::{self, SimConfig};

pub const LOG_SCHEMA: &str = "pmwb-log-v1";

/// One raw observation of an experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawObservation {
    pub cycles: f64,
    pub uops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// Anything that can run an experiment and report cycles and total μops.
///
/// Repeated calls on the same experiment may differ only by noise.
pub trait MeasurementBackend: Send + Sync {
    fn raw_measure(&self, e: &Experiment) -> Result<RawObservation, BackendError>;
}

/// Backend running experiments on the simulated CPU.
///
/// The n-th observation of an experiment uses noise draw n, so a sequence of
/// calls is reproducible for a fixed seed.
pub struct SimulatedBackend {
    mapping: PortMapping,
    cfg: SimConfig,
    draws: Mutex<HashMap<Experiment, u64>>,
}

impl SimulatedBackend {
    pub fn new(mapping: PortMapping, cfg: SimConfig) -> Self {
        SimulatedBackend {
            mapping,
            cfg,
            draws: Mutex::new(HashMap::new()),
        }
    }

    pub fn mapping(&self) -> &PortMapping {
        &self.mapping
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.cfg
    }
}

impl MeasurementBackend for SimulatedBackend {
    fn raw_measure(&self, e: &Experiment) -> Result<RawObservation, BackendError> {
        let draw = {
            let mut draws = self.draws.lock().expect("draw counter poisoned");
            let slot = draws.entry(e.clone()).or_insert(0);
            *slot += 1;
            *slot - 1
        };
        let err = |x: crate::mapping::MappingError| BackendError(x.to_string());
        Ok(RawObservation {
            cycles: vcpu::simulate_cycles_nth(&self.mapping, e, &self.cfg, draw).map_err(err)?,
            uops: vcpu::simulate_uops(&self.mapping, e).map_err(err)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    /// CPI tolerance under which two measurements count as equal.
    pub epsilon: f64,
    pub repetitions: u32,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            epsilon: 0.02,
            repetitions: 11,
        }
    }
}

/// Aggregated observation: median cycles and modal μop count.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub experiment: Experiment,
    pub cycles: f64,
    pub uops: u64,
    pub repetitions: u32,
}

impl Measurement {
    /// Cycles per instruction.
    pub fn cpi(&self) -> f64 {
        self.cycles / self.experiment.size() as f64
    }
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("cannot measure the empty experiment")]
    EmptyExperiment,
    #[error("invalid measurement config: {0}")]
    InvalidConfig(String),
    #[error("backend failed on {experiment}: {source}")]
    Backend {
        experiment: Experiment,
        #[source]
        source: BackendError,
    },
}

/// Runs `cfg.repetitions` raw measurements of `e` and aggregates them.
///
/// Cycles are the lower median, μops the most frequent count (smallest on
/// ties).
pub fn measure(backend: &dyn MeasurementBackend, e: &Experiment, cfg: &MeasureConfig) -> Result<Measurement, MeasureError> {
    if e.is_empty() {
        return Err(MeasureError::EmptyExperiment);
    }
    if cfg.repetitions == 0 {
        return Err(MeasureError::InvalidConfig("repetitions must be positive".into()));
    }
    let mut cycles = Vec::with_capacity(cfg.repetitions as usize);
    let mut uops: BTreeMap<u64, u32> = BTreeMap::new();
    for _ in 0..cfg.repetitions {
        let obs = backend.raw_measure(e).map_err(|source| MeasureError::Backend {
            experiment: e.clone(),
            source,
        })?;
        cycles.push(obs.cycles);
        *uops.entry(obs.uops).or_default() += 1;
    }
    cycles.sort_by(f64::total_cmp);
    let median = cycles[(cycles.len() - 1) / 2];
    let mode = uops
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&u, _)| u)
        .expect("at least one repetition");
    Ok(Measurement {
        experiment: e.clone(),
        cycles: median,
        uops: mode,
        repetitions: cfg.repetitions,
    })
}

/// CPI equality within `cfg.epsilon` (inclusive).
///
/// Reflexive and symmetric but not transitive: a chain of pairwise-equal
/// measurements may drift by more than epsilon end to end.
pub fn cpi_equal(a: &Measurement, b: &Measurement, cfg: &MeasureConfig) -> bool {
    (a.cpi() - b.cpi()).abs() <= cfg.epsilon
}

/// A measuring session: memoizes measurements by experiment and appends every
/// fresh measurement to a shared log.
pub struct Harness {
    backend: Arc<dyn MeasurementBackend>,
    cfg: MeasureConfig,
    memo: Mutex<BTreeMap<Experiment, Measurement>>,
    log: Arc<Mutex<MeasurementLog>>,
}

impl Harness {
    pub fn new(backend: Arc<dyn MeasurementBackend>, cfg: MeasureConfig) -> Self {
        Harness {
            backend,
            cfg,
            memo: Mutex::new(BTreeMap::new()),
            log: Arc::new(Mutex::new(MeasurementLog::default())),
        }
    }

    pub fn config(&self) -> &MeasureConfig {
        &self.cfg
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon
    }

    /// A session with an empty memo that shares backend and log.
    pub fn fresh_session(&self) -> Harness {
        Harness {
            backend: Arc::clone(&self.backend),
            cfg: self.cfg.clone(),
            memo: Mutex::new(BTreeMap::new()),
            log: Arc::clone(&self.log),
        }
    }

    pub fn measure(&self, e: &Experiment) -> Result<Measurement, MeasureError> {
        if let Some(m) = self.memo.lock().expect("memo poisoned").get(e) {
            return Ok(m.clone());
        }
        let m = measure(self.backend.as_ref(), e, &self.cfg)?;
        // A concurrent caller may have won the race; keep the first result.
        let m = self
            .memo
            .lock()
            .expect("memo poisoned")
            .entry(e.clone())
            .or_insert_with(|| {
                self.log.lock().expect("log poisoned").entries.push(m.clone());
                m
            })
            .clone();
        Ok(m)
    }

    pub fn cycles(&self, e: &Experiment) -> Result<f64, MeasureError> {
        self.measure(e).map(|m| m.cycles)
    }

    pub fn log(&self) -> MeasurementLog {
        self.log.lock().expect("log poisoned").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementLog {
    pub entries: Vec<Measurement>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}, column {column}: {msg}")]
    Format { line: usize, column: usize, msg: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    counts: BTreeMap<String, u32>,
    cycles: f64,
    uops: u64,
    repetitions: u32,
}

impl MeasurementLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            schema: LOG_SCHEMA.to_string(),
        })
        .expect("header serializes");
        out.push('\n');
        for m in &self.entries {
            out.push_str(&format!(
                "{{\"counts\":{},\"cycles\":{},\"uops\":{},\"repetitions\":{}}}\n",
                serde_json::to_string(m.experiment.counts()).expect("counts serialize"),
                format_sig17(m.cycles),
                m.uops,
                m.repetitions
            ));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<MeasurementLog, LogError> {
        let fmt_err = |line: usize, column: usize, msg: String| LogError::Format { line, column, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| fmt_err(1, 1, "empty log: missing schema header".into()))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| fmt_err(1, e.column(), format!("bad header: {e}")))?;
        if header.schema != LOG_SCHEMA {
            return Err(fmt_err(
                1,
                1,
                format!("unsupported schema version `{}` (expected `{LOG_SCHEMA}`)", header.schema),
            ));
        }
        let mut entries = Vec::new();
        for (line, text) in lines {
            if text.trim().is_empty() {
                continue;
            }
            let doc: EntryDoc = serde_json::from_str(text).map_err(|e| fmt_err(line, e.column(), e.to_string()))?;
            if !doc.cycles.is_finite() || doc.cycles < 0.0 {
                return Err(fmt_err(line, 1, format!("cycles must be finite and non-negative, got {}", doc.cycles)));
            }
            if doc.repetitions == 0 {
                return Err(fmt_err(line, 1, "repetitions must be positive".into()));
            }
            let experiment = experiment_from_counts(entries.len(), &doc.counts).map_err(|e| fmt_err(line, 1, e.to_string()))?;
            entries.push(Measurement {
                experiment,
                cycles: doc.cycles,
                uops: doc.uops,
                repetitions: doc.repetitions,
            });
        }
        Ok(MeasurementLog { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MeasurementLog, LogError> {
        MeasurementLog::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// Decimal with 17 significant digits; positional for moderate magnitudes,
/// scientific otherwise. Always a valid JSON number that parses back to `x`.
pub fn format_sig17(x: f64) -> String {
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-6..=20).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let body = if exp >= 0 {
        let split = exp as usize + 1;
        let padded = format!("{digits:0<width$}", width = split.max(digits.len()));
        let (int, frac) = padded.split_at(split);
        format!("{int}.{}", if frac.is_empty() { "0" } else { frac })
    } else {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    };
    format!("{sign}{body}")
}
