//! The workbench configuration file (TOML).
//!
//! ```toml
//! mapping = "truth.json"
//! seed = 7
//! out = "out"
//!
//! [sim]
//! r_max = 4.0
//! noise_rel_std = 0.005
//!
//! [measure]
//! epsilon = 0.02
//! repetitions = 11
//!
//! [solver]
//! n_ports = 4
//! timeout_secs = 300
//!
//! [infer]
//! votes = 3
//! k_rule = "default"
//!
//! [eval]
//! blocks = 5000
//! block_size = 5
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use num_rational::Ratio;
use pmwb::charmap::{CharmapConfig, KRule};
use pmwb::exact::decimal_ratio64;
use pmwb::measure::MeasureConfig;
use pmwb::smt::DEFAULT_SOLVER;
use pmwb::solver::{ImproperSpec, SolverConfig};
use pmwb::vcpu::SimConfig;
use serde::Deserialize;

use crate::CliError;

pub const SOLVER_ENV: &str = "PMWB_SOLVER";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbenchConfig {
    /// Ground-truth mapping the simulator runs.
    #[serde(default)]
    pub mapping: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub infer: InferSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Number of ports the inferred mapping ranges over.
    pub n_ports: Option<usize>,
    pub command: Option<String>,
    pub timeout_secs: u64,
    pub multiplicity_bound: u32,
    pub improper_blockers: Vec<ImproperSpec>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            n_ports: None,
            command: None,
            timeout_secs: 300,
            multiplicity_bound: 20,
            improper_blockers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    /// Restricts inference to these instructions; all of the mapping's otherwise.
    pub instructions: Option<Vec<String>>,
    pub votes: u32,
    pub k_rule: KRule,
    pub uop_overrides: BTreeMap<String, u32>,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            instructions: None,
            votes: 1,
            k_rule: KRule::Default,
            uop_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub blocks: usize,
    pub block_size: u32,
    /// Bucket width of the IPC heatmap.
    pub bucket_width: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            blocks: 5000,
            block_size: 5,
            bucket_width: 0.25,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub solver: Option<String>,
    pub epsilon: Option<f64>,
    pub r_max: Option<f64>,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        WorkbenchConfig {
            mapping: None,
            seed: 0,
            out: default_out(),
            sim: SimConfig::default(),
            measure: MeasureConfig::default(),
            solver: SolverSection::default(),
            infer: InferSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl WorkbenchConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self, CliError> {
        let mut cfg: WorkbenchConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            msg: e.to_string().trim_end().to_string(),
        })?;
        if let Some(m) = &cfg.mapping {
            cfg.mapping = Some(base.join(m));
        }
        cfg.out = base.join(&cfg.out);
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, path, base)
    }

    /// Loads `path` if given, else the defaults, then applies `ov` and the
    /// solver environment variable.
    pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => WorkbenchConfig::default(),
        };
        cfg.apply(ov, std::env::var(SOLVER_ENV).ok())?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides, env_solver: Option<String>) -> Result<(), CliError> {
        if let Some(seed) = ov.seed {
            self.seed = seed;
            self.sim.rng_seed = seed;
        }
        if let Some(out) = &ov.out {
            self.out = out.clone();
        }
        if let Some(eps) = ov.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(CliError::Usage(format!("--epsilon must be positive, got {eps}")));
            }
            self.measure.epsilon = eps;
        }
        if let Some(r) = ov.r_max {
            self.sim.r_max = Some(parse_rate(r)?);
        }
        if let Some(cmd) = &ov.solver {
            self.solver.command = Some(cmd.clone());
        } else if self.solver.command.is_none() {
            self.solver.command = env_solver.filter(|s| !s.trim().is_empty());
        }
        Ok(())
    }

    fn validate(&self, origin: &Path) -> Result<(), CliError> {
        let bad = |msg: String| CliError::Config {
            path: origin.to_path_buf(),
            msg,
        };
        if let Some(m) = &self.mapping {
            if !m.is_file() {
                return Err(bad(format!("mapping file {} does not exist", m.display())));
            }
        }
        if !(self.measure.epsilon.is_finite() && self.measure.epsilon > 0.0) {
            return Err(bad(format!("measure.epsilon must be positive, got {}", self.measure.epsilon)));
        }
        if self.measure.repetitions == 0 {
            return Err(bad("measure.repetitions must be positive".into()));
        }
        if !(self.sim.noise_rel_std.is_finite() && self.sim.noise_rel_std >= 0.0) {
            return Err(bad(format!("sim.noise_rel_std must be non-negative, got {}", self.sim.noise_rel_std)));
        }
        if self.infer.votes.is_multiple_of(2) {
            return Err(bad(format!("infer.votes must be odd, got {}", self.infer.votes)));
        }
        if self.solver.multiplicity_bound == 0 {
            return Err(bad("solver.multiplicity_bound must be positive".into()));
        }
        if !(self.eval.bucket_width.is_finite() && self.eval.bucket_width > 0.0) {
            return Err(bad(format!("eval.bucket_width must be positive, got {}", self.eval.bucket_width)));
        }
        Ok(())
    }

    pub fn solver_command(&self) -> String {
        self.solver.command.clone().unwrap_or_else(|| DEFAULT_SOLVER.to_string())
    }

    /// The ground-truth mapping path, required by simulation commands.
    pub fn mapping_path(&self) -> Result<&Path, CliError> {
        self.mapping
            .as_deref()
            .ok_or_else(|| CliError::Usage("no ground-truth mapping configured (set `mapping` in the config file)".into()))
    }

    /// Solver settings for a run with the given blocking port counts.
    pub fn solver_config(&self, port_counts: BTreeMap<String, u32>) -> Result<SolverConfig, CliError> {
        let n_ports = self
            .solver
            .n_ports
            .ok_or_else(|| CliError::Usage("solver.n_ports is required for inference".into()))?;
        let mut cfg = SolverConfig::new(n_ports, port_counts);
        cfg.epsilon = self.measure.epsilon;
        cfg.r_max = self.sim.r_max;
        cfg.multiplicity_bound = self.solver.multiplicity_bound;
        cfg.solver_command = self.solver_command();
        cfg.timeout = Duration::from_secs(self.solver.timeout_secs);
        cfg.improper_blockers = self.solver.improper_blockers.clone();
        Ok(cfg)
    }

    pub fn charmap_config(&self) -> CharmapConfig {
        CharmapConfig {
            k_rule: self.infer.k_rule,
            uop_overrides: self.infer.uop_overrides.clone(),
        }
    }
}

pub fn parse_rate(x: f64) -> Result<Ratio<i64>, CliError> {
    if !(x.is_finite() && x > 0.0) {
        return Err(CliError::Usage(format!("--rmax must be positive, got {x}")));
    }
    decimal_ratio64(x).ok_or_else(|| CliError::Usage(format!("--rmax {x} has too many digits")))
}
