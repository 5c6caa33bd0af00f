//! `bilayer-tms`: run, sweep, benchmark and fit bilayer squeezing simulations.

mod config;
mod output;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ExperimentConfig, GridAxis};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: bilayer_tms::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn core(context: impl Into<String>, source: bilayer_tms::Error) -> Self {
        CliError::Core {
            context: context.into(),
            source,
        }
    }

    /// 2 bad input, 3 integration quality, 4 capacity, 5 statistics/fit, 6 I/O.
    pub fn exit_code(&self) -> u8 {
        use bilayer_tms::Error as E;
        match self {
            CliError::Config(_) | CliError::Format(_) => 2,
            CliError::Io { .. } => 6,
            CliError::Core { source, .. } => match source {
                E::IntegrationQuality { .. } => 3,
                E::Capacity(_) => 4,
                E::Statistics(_) | E::Fit(_) => 5,
                E::Parameter(_) | E::DegenerateFilling(_) | E::Geometry(_) | E::Sequence(_) | E::Mismatch(_) => 2,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "bilayer-tms", version, about = "Two-mode squeezing in bilayer power-law spin models")]
struct Cli {
    /// Worker threads (wall time only; results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `dtwa.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every model at every lattice point.
    Run(Common),
    /// Like `run`, plus a summary of minimal variances, scaling fits and collapse.
    Sweep(Common),
    /// Compare dTWA against exact references, or print closed-form curves.
    Oracle(OracleArgs),
    /// Minimal variances and scaling fits from saved series files.
    Fit {
        files: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, required_unless_present = "tms")]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Closed-form curves only, for this many spins per layer.
    #[arg(long, conflicts_with = "config")]
    tms: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    v_avg: f64,
    #[arg(long, default_value_t = 6.0)]
    tau_max: f64,
    #[arg(long, default_value_t = 61)]
    points: usize,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.dtwa.seed = s;
    }
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run(c) => {
            let cfg = load(&c.config, c.seed)?;
            let out = out_dir(c.out, &cfg);
            for f in runner::run(&cfg, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Sweep(c) => {
            let cfg = load(&c.config, c.seed)?;
            let out = out_dir(c.out, &cfg);
            let s = runner::sweep(&cfg, &out)?;
            print_summary(&s);
        }
        Command::Oracle(o) => {
            if let Some(n) = o.tms {
                let taus = GridAxis::Range {
                    max: o.tau_max,
                    points: o.points,
                }
                .values();
                let out = o.out.unwrap_or_else(|| PathBuf::from("out"));
                println!("{}", runner::oracle_tms(n, o.v_avg, &taus, &out)?.display());
                return Ok(());
            }
            let cfg = load(o.config.as_deref().expect("clap enforces --config"), o.seed)?;
            let out = out_dir(o.out, &cfg);
            for e in runner::oracle(&cfg, &out)? {
                for (name, d) in &e.var_minus_deviation {
                    println!(
                        "{} L={} vs {name}: max rel dev {:.4} up to tau {:.3} (reference min {:.4}, dTWA {:.4})",
                        e.model, e.lattice.l, d.max_rel, d.up_to_tau, d.reference_min, d.dtwa_at_min
                    );
                }
            }
        }
        Command::Fit { files, out } => print_summary(&runner::fit(&files, &out)?),
    }
    Ok(())
}

fn print_summary(s: &runner::Summary) {
    for p in &s.points {
        println!(
            "{}: var_min {:.4} +- {:.4} at tau {:.3}{}",
            p.file,
            p.var_min,
            p.var_min_err,
            p.tau_min,
            if p.at_boundary { " (grid edge)" } else { "" }
        );
    }
    for f in &s.scaling_fits {
        println!(
            "fit {} alpha={} a_z={} filling={}: nu = {:.3} +- {:.3}",
            f.model, f.alpha, f.a_z, f.filling, f.fit.nu, f.fit.nu_se
        );
    }
    for c in &s.collapse {
        println!("collapse {} L={} fillings {:?}: {:.3}", c.model, c.l, c.fillings, c.metric);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
