use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmwb_cli::commands::{self, experiments_json, load_mapping, mapping_json};
use pmwb_cli::{write_file, CliError, Overrides, WorkbenchConfig};

/// Port-mapping inference workbench.
#[derive(Parser)]
#[command(name = "pmwb", version, about)]
struct Cli {
    /// Workbench config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// SMT solver command line, e.g. "z3 -in".
    #[arg(long, global = true)]
    solver: Option<String>,
    /// CPI tolerance.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Instructions-per-cycle ceiling of the pipeline.
    #[arg(long, global = true)]
    rmax: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure experiments on the simulated ground truth.
    Simulate {
        /// Experiments file (JSON).
        experiments: PathBuf,
    },
    /// Infer a port mapping from the simulated ground truth.
    Infer {
        /// Continue core inference from the saved state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Compare an inferred mapping with the ground truth on random blocks.
    Eval {
        inferred: PathBuf,
        /// Ground truth; defaults to the configured mapping.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Check two mappings for observational equivalence.
    Verify {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_size: u32,
    },
    /// Generate a random mapping.
    GenMapping {
        #[arg(long)]
        insns: usize,
        #[arg(long)]
        ports: usize,
        #[arg(long, default_value_t = 3)]
        max_uops: u32,
        /// Add a blocking instruction for every port set used.
        #[arg(long)]
        blocking_suite: bool,
        /// Written to stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Generate random dependency-free blocks over a mapping's instructions.
    GenBlocks {
        /// Defaults to the configured mapping.
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 5)]
        size: u32,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out,
        solver: cli.solver,
        epsilon: cli.epsilon,
        r_max: cli.rmax,
    };
    let cfg = WorkbenchConfig::resolve(cli.config.as_deref(), &ov)?;
    match cli.command {
        Command::Simulate { experiments } => {
            let log = commands::cmd_simulate(&cfg, &experiments)?;
            for m in &log.entries {
                println!("{}\t{}", m.experiment, m.cycles);
            }
        }
        Command::Infer { resume } => {
            let r = commands::cmd_infer(&cfg, resume)?;
            eprintln!(
                "{} blocking classes, {} instructions characterized, {} excluded; results in {}",
                r.blocking.classes.len(),
                r.characterization.results.len(),
                r.characterization.excluded.len(),
                cfg.out.display()
            );
            print!("{}", mapping_json(&r.mapping));
        }
        Command::Eval { inferred, truth } => {
            let ev = commands::cmd_eval(&cfg, &inferred, truth.as_deref())?;
            print!("{}", pmwb_cli::sorted_json(&ev.report));
        }
        Command::Verify { a, b, max_size } => {
            if let Some(e) = commands::cmd_verify(&a, &b, max_size, cfg.sim.r_max, cfg.measure.epsilon)? {
                print!("{}", pmwb_cli::sorted_json(&serde_json::json!({ "counts": e.counts() })));
                return Ok(ExitCode::from(1));
            }
        }
        Command::GenMapping {
            insns,
            ports,
            max_uops,
            blocking_suite,
            output,
        } => {
            let m = commands::cmd_gen_mapping(insns, ports, max_uops, cfg.seed, blocking_suite)?;
            emit(output.as_deref(), &mapping_json(&m))?;
        }
        Command::GenBlocks {
            mapping,
            count,
            size,
            output,
        } => {
            let path = match mapping {
                Some(p) => p,
                None => cfg.mapping_path()?.to_path_buf(),
            };
            let exps = commands::cmd_gen_blocks(&load_mapping(&path)?, count, size, cfg.seed)?;
            emit(output.as_deref(), &experiments_json(&exps))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
