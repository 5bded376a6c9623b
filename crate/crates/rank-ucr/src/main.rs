//! `rank-ucr`: run ranking-bandit experiments from a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rank_ucr::config::ExperimentConfig;
use rank_ucr::glm::{t0_lower_bound, theoretical_xi, GlmFamily, TheoryConstants};
use rank_ucr::harness::{run_experiment, write_csv};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "rank-ucr", version, about = "Contextual ranking-bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, run) pair in the config and write regret CSVs.
    Run {
        /// Experiment description (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Parse and validate a config without running it.
    Validate {
        /// Experiment description (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the theoretical confidence width and initialization length
    /// for the config's dimensions.
    ///
    /// Constant defaults describe the logistic family with parameters in
    /// the unit-ball setup this crate simulates; override them for other
    /// regimes.
    Theory {
        /// Experiment description (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Sub-Gaussian scale of outcome noise.
        #[arg(long, default_value_t = 0.5)]
        sigma_bar: f64,
        /// Lower bound on the mean function's derivative over the
        /// feasible set (logistic: sigmoid'(sqrt(2))).
        #[arg(long, default_value_t = 0.157322)]
        kappa: f64,
        /// Upper bound on the mean function's derivative.
        #[arg(long, default_value_t = 0.25)]
        m1: f64,
        /// Upper bound on the mean function's second derivative.
        #[arg(long, default_value_t = 0.0962250448649376)]
        m2: f64,
        /// Smallest eigenvalue of the feature second-moment matrix.
        /// Defaults to the value of the built-in context distribution.
        #[arg(long)]
        c_x: Option<f64>,
        /// Failure probability of the confidence bounds.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Reward ceiling. Defaults to the config's max_reward.
        #[arg(long)]
        r0: Option<f64>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    }
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

fn load_validated(path: &PathBuf) -> Result<(ExperimentConfig, Vec<String>), Failure> {
    let cfg = ExperimentConfig::load(path).map_err(config_err)?;
    let warnings = cfg.validate().map_err(config_err)?;
    Ok((cfg, warnings))
}

fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("RANK_UCR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(config_err(format!(
                "RANK_UCR_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(config_err(format!("RANK_UCR_THREADS: {e}"))),
    }
}

/// Smallest eigenvalue of E[z z^T] for the built-in simulator: positions
/// are equally spaced with mean-square (1/K) sum pos_k^2, and the context
/// block is (3/4) E[x x^T] = 3 / (4 (d + 2)) I on the unit ball.
fn default_c_x(d: usize, k: usize) -> f64 {
    let pos_ms = (0..k)
        .map(|j| {
            let p = (j + 1) as f64 / k as f64 - 0.5;
            p * p
        })
        .sum::<f64>()
        / k as f64;
    pos_ms.min(0.75 / (d as f64 + 2.0))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config } => {
            let (cfg, warnings) = load_validated(&config)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let threads = thread_cap()?;
            let output = run_experiment(&cfg, threads).map_err(runtime_err)?;
            let (raw, agg) = write_csv(&output, &cfg.output).map_err(runtime_err)?;
            println!("wrote {}", raw.display());
            println!("wrote {}", agg.display());
            Ok(())
        }
        Command::Validate { config } => {
            let (_, warnings) = load_validated(&config)?;
            for w in &warnings {
                println!("warning: {w}");
            }
            println!("config ok");
            Ok(())
        }
        Command::Theory {
            config,
            sigma_bar,
            kappa,
            m1,
            m2,
            c_x,
            delta,
            r0,
        } => {
            let (cfg, _) = load_validated(&config)?;
            if matches!(cfg.family, GlmFamily::Linear { .. }) {
                eprintln!("note: constant defaults target the logistic family; override for linear runs");
            }
            let consts = TheoryConstants::new(
                sigma_bar,
                kappa,
                m1,
                m2,
                c_x.unwrap_or_else(|| default_c_x(cfg.d, cfg.k)),
                delta,
                r0.unwrap_or(cfg.max_reward),
            )
            .map_err(config_err)?;
            let xi = theoretical_xi(&consts, cfg.d, cfg.t).map_err(runtime_err)?;
            let t0_min = t0_lower_bound(&consts, cfg.d, cfg.t, cfg.n, cfg.k).map_err(runtime_err)?;
            println!("theoretical_xi = {xi:.16e}");
            println!("t0_lower_bound = {t0_min:.16e}");
            println!("configured_t0 = {}", cfg.t0);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // behave like a normal unix tool when a pipe consumer (head, grep -m)
    // closes stdout early, instead of panicking on the broken pipe
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
