use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use betadyn::quenched::{CMethod, PerturbativeSettings};
use betadyn_cli::config::{parse_model, parse_system};
use betadyn_cli::{exit, run, CliError, Command, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Invariant densities of random beta-transformations.
///
/// Prints a JSON report on stdout; with --out, also writes report.json and
/// CSV step functions there. Set BETADYN_THREADS to bound the worker pool.
#[derive(Parser)]
#[command(name = "betadyn", version)]
struct Cli {
    /// Significand bits for extended-precision orbit diagnostics.
    #[arg(long, global = true)]
    precision: Option<u32>,
    /// Output directory for report.json and CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stationary density of an i.i.d. system.
    Density(SystemTol),
    /// Essential sup and inf of the density with their closed forms.
    Bounds(SystemTol),
    /// Derivative of the two-map density in the Bernoulli weight p.
    Response {
        #[arg(long)]
        beta0: f64,
        #[arg(long)]
        beta1: f64,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Also compare against central differences with this step.
        #[arg(long)]
        fd_eps: Option<f64>,
    },
    /// Fiber densities of a system driven by a noise process.
    Quenched {
        /// Noise model as JSON or a path to a JSON file.
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = Mode::Series)]
        mode: Mode,
        /// Outer truncation K.
        #[arg(long, default_value_t = 40)]
        outer: usize,
        /// Inner depth M.
        #[arg(long, default_value_t = 60)]
        inner: usize,
        /// Center of the perturbative window.
        #[arg(long)]
        beta0: Option<f64>,
        #[arg(long, default_value_t = 400)]
        chi_depth: usize,
        /// Tolerance of the periodic solve.
        #[arg(long, default_value_t = 1e-14)]
        tol: f64,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Depth of fiber densities and residual checks.
        #[arg(long, default_value_t = 60)]
        depth: usize,
        #[arg(long)]
        equivariance: bool,
    },
    /// Digits of x along a path of slopes.
    Expand {
        /// Comma-separated slopes, repeated periodically.
        #[arg(long, value_delimiter = ',', required = true)]
        path: Vec<f64>,
        #[arg(long)]
        x: f64,
        #[arg(long, default_value_t = 40)]
        depth: usize,
    },
    /// Ulam discretization compared with the exact density.
    VerifyUlam {
        #[arg(long)]
        system: String,
        #[arg(long, default_value_t = 4096)]
        bins: usize,
    },
    /// Monte Carlo histogram compared with the exact density.
    VerifyMc {
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        system: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 1000)]
        orbits: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 256)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct SystemTol {
    /// JSON, `beta:prob,...`, or a path to a JSON file.
    #[arg(long)]
    system: String,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Series,
    Periodic,
    Perturbative,
}

fn config_from(cli: Cli) -> Result<RunConfig, CliError> {
    let command = match cli.command {
        Cmd::Density(a) => Command::Density {
            system: parse_system(&a.system)?,
            tol: a.tol,
        },
        Cmd::Bounds(a) => Command::Bounds {
            system: parse_system(&a.system)?,
            tol: a.tol,
        },
        Cmd::Response {
            beta0,
            beta1,
            p,
            tol,
            fd_eps,
        } => Command::Response {
            beta0,
            beta1,
            p,
            tol,
            fd_eps,
        },
        Cmd::Quenched {
            model,
            mode,
            outer,
            inner,
            beta0,
            chi_depth,
            tol,
            samples,
            seed,
            depth,
            equivariance,
        } => {
            let method = match mode {
                Mode::Series => CMethod::Series { outer, inner },
                Mode::Periodic => CMethod::Periodic { tol },
                Mode::Perturbative => {
                    let beta0 = beta0.ok_or_else(|| {
                        CliError::Usage("--mode perturbative needs --beta0".into())
                    })?;
                    CMethod::Perturbative(PerturbativeSettings {
                        beta0,
                        outer,
                        inner,
                        chi_depth,
                    })
                }
            };
            Command::Quenched {
                model: parse_model(&model)?,
                method,
                samples,
                seed,
                depth,
                equivariance,
            }
        }
        Cmd::Expand { path, x, depth } => Command::Expand { path, x, depth },
        Cmd::VerifyUlam { system, bins } => Command::VerifyUlam {
            system: parse_system(&system)?,
            bins,
            tol: 1e-13,
            exact_tol: 1e-10,
        },
        Cmd::VerifyMc {
            system,
            model,
            orbits,
            steps,
            burn_in,
            bins,
            seed,
        } => Command::VerifyMc {
            system: system.as_deref().map(parse_system).transpose()?,
            model: model.as_deref().map(parse_model).transpose()?,
            orbits,
            steps,
            burn_in,
            bins,
            seed,
            exact_tol: 1e-10,
        },
        Cmd::Run { config } => {
            let text = std::fs::read_to_string(&config).map_err(|source| CliError::Io {
                path: config,
                source,
            })?;
            let mut cfg = RunConfig::from_json(&text)?;
            cfg.out_dir = cli.out.or(cfg.out_dir);
            cfg.precision = cli.precision.or(cfg.precision);
            return Ok(cfg);
        }
    };
    Ok(RunConfig {
        command,
        out_dir: cli.out,
        precision: cli.precision,
    })
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("BETADYN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("BETADYN_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads()
        .and_then(|_| config_from(cli))
        .and_then(|cfg| run(&cfg));
    match result {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out.report).expect("reports serialize");
            // a closed pipe downstream is not a failure of the run
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
