use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dualscope::control::ControlSpec;
use dualscope::diagnostics::{distinguish, write_trace_csv, DistinguishConfig};
use dualscope::duality::{
    empirical_reachable_span, verify_adjoint_identity, ControlFamily, ExperimentConfig, ReachableSpan, SpanEstimator,
};
use dualscope::filter::{wonham, write_filter_csv};
use dualscope::model::parse_vector;
use dualscope::observability::nonlinear_closure;
use dualscope::simulate::{physical_paths, write_paths_csv, TimeGrid};
use dualscope::{analyze, Error, Model, ProbabilityMeasure, SignedMeasure, DEFAULT_RANK_TOL};

const EXIT_UNOBSERVABLE: u8 = 10;
const EXIT_USAGE: u8 = 2;
const EXIT_DUALITY_VIOLATION: u8 = 20;
const EXIT_MISMATCH: u8 = 30;

/// Observability of finite-state hidden Markov models via the dual control system.
#[derive(Debug, Parser)]
#[command(name = "dualscope", version)]
struct Cli {
    /// Rank tolerance for subspace computations.
    #[arg(long, global = true, default_value_t = DEFAULT_RANK_TOL)]
    tol: f64,
    /// Master seed for all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DUALSCOPE_THREADS")]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Algebraic observability report; exit 10 when unobservable.
    Analyze { model: PathBuf },
    /// Simulate observation paths (CSV) and optionally their Wonham filters.
    Simulate {
        model: PathBuf,
        /// Prior, comma-separated.
        #[arg(long)]
        mu: String,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 10)]
        paths: usize,
        /// Filter trajectories CSV.
        #[arg(long)]
        filter_out: Option<PathBuf>,
    },
    /// Check the duality identity between the dual BSDE and the Zakai flow.
    Duality {
        model: PathBuf,
        /// Experiment config JSON; command-line flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Initial measure, comma-separated (may be signed).
        #[arg(long)]
        pi0: Option<String>,
        /// `const:v1,..` or `feedback:<file>`.
        #[arg(long)]
        control: Option<String>,
        /// Terminal constant.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Behavioral distinguishability of two priors.
    Distinguish {
        model: PathBuf,
        #[arg(long)]
        mu: String,
        #[arg(long)]
        nu: String,
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        /// Path-averaged discrepancy trace CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Empirical span of dual initial values over random controls.
    Span {
        model: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 12)]
        controls: usize,
        #[arg(long, default_value_t = 4000)]
        paths: usize,
        #[arg(long, value_enum, default_value_t = Family::Feedback)]
        family: Family,
        #[arg(long, value_enum, default_value_t = Estimator::Bsde)]
        estimator: Estimator,
    },
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Feedback,
    Deterministic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Estimator {
    Bsde,
    Forward,
}

#[derive(Serialize)]
struct SpanReport<'a> {
    closure_dim: usize,
    #[serde(flatten)]
    span: &'a ReachableSpan,
}

/// Failure with a process exit code and a message for stderr.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    Model::from_json_file(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn probability(text: &str, what: &str, d: usize) -> Result<ProbabilityMeasure, Failure> {
    let mu = parse_vector(text)
        .and_then(|v| ProbabilityMeasure::from_slice(&v))
        .map_err(|e| usage(format!("--{what}: {e}")))?;
    mu.check_dim(d).map_err(|e| usage(format!("--{what}: {e}")))?;
    Ok(mu)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    if !(cli.tol > 0.0 && cli.tol.is_finite()) {
        return Err(usage("--tol must be positive"));
    }
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::Analyze { model } => {
            let model = load_model(&model)?;
            let report = analyze(&model, cli.tol);
            write_json(out, &report)?;
            Ok(if report.observable { 0 } else { EXIT_UNOBSERVABLE })
        }
        Command::Simulate {
            model,
            mu,
            grid,
            paths,
            filter_out,
        } => {
            let model = load_model(&model)?;
            let mu = probability(&mu, "mu", model.d())?;
            if paths == 0 {
                return Err(usage("--paths must be positive"));
            }
            let grid = TimeGrid::new(grid.horizon, grid.dt)?;
            let bundles = physical_paths(&model, &mu, &grid, paths, seed)?;
            if let Some(path) = filter_out {
                let runs = bundles
                    .iter()
                    .map(|b| wonham(&model, &mu, &grid, &b.observation))
                    .collect::<dualscope::Result<Vec<_>>>()?;
                write_filter_csv(File::create(path)?, &runs)?;
            }
            write_paths_csv(open_out(out)?, &bundles)?;
            Ok(0)
        }
        Command::Duality {
            model,
            config,
            pi0,
            control,
            c,
            horizon,
            dt,
            paths,
        } => {
            let model = load_model(&model)?;
            let mut cfg: Option<ExperimentConfig> = match config {
                Some(p) => Some(
                    serde_json::from_str(&std::fs::read_to_string(&p)?)
                        .map_err(|e| usage(format!("{}: {e}", p.display())))?,
                ),
                None => None,
            };
            let spec = match (control, cfg.as_mut()) {
                (Some(text), _) => ControlSpec::parse_compact(&text)?,
                (None, Some(cfg)) => cfg.control.clone(),
                (None, None) => return Err(usage("--control or --config is required")),
            };
            let pi0 = match (pi0, cfg.as_ref().and_then(|c| c.pi0.clone())) {
                (Some(text), _) => parse_vector(&text)?,
                (None, Some(v)) => v,
                (None, None) => return Err(usage("--pi0 is required")),
            };
            let pi0 = SignedMeasure::from_slice(&pi0)?;
            let c = c.or(cfg.as_ref().map(|x| x.c)).unwrap_or(0.0);
            let horizon = horizon.or(cfg.as_ref().map(|x| x.horizon)).unwrap_or(1.0);
            let dt = dt.or(cfg.as_ref().map(|x| x.dt)).unwrap_or(1e-3);
            let n_paths = paths.or(cfg.as_ref().map(|x| x.n_paths)).unwrap_or(20_000);
            let seed = cli.seed.or(cfg.as_ref().map(|x| x.seed)).unwrap_or(0);
            let grid = TimeGrid::new(horizon, dt)?;
            let control = spec.build(&grid, model.m())?;
            let check = verify_adjoint_identity(&model, &pi0, &control, c, n_paths, seed)?;
            write_json(out, &check)?;
            let slack = 1e-12 * (1.0 + check.lhs.abs());
            if check.residual > 5.0 * check.std_err + slack {
                eprintln!(
                    "duality violation: residual {:e} exceeds 5 standard errors ({:e})",
                    check.residual, check.std_err
                );
                return Ok(EXIT_DUALITY_VIOLATION);
            }
            Ok(0)
        }
        Command::Distinguish {
            model,
            mu,
            nu,
            horizon,
            dt,
            paths,
            trace_out,
        } => {
            let model = load_model(&model)?;
            let mu = probability(&mu, "mu", model.d())?;
            let nu = probability(&nu, "nu", model.d())?;
            let grid = TimeGrid::new(horizon, dt)?;
            let mut config = DistinguishConfig::new(grid, paths, seed);
            config.tol = cli.tol;
            let result = distinguish(&model, &mu, &nu, &config)?;
            if let Some(path) = trace_out {
                write_trace_csv(File::create(path)?, &grid, &result.trace)?;
            }
            write_json(out, &result)?;
            if let Some(warning) = &result.warning {
                eprintln!("consistency mismatch: {warning}");
                return Ok(EXIT_MISMATCH);
            }
            Ok(0)
        }
        Command::Span {
            model,
            grid,
            controls,
            paths,
            family,
            estimator,
        } => {
            let model = load_model(&model)?;
            let grid = TimeGrid::new(grid.horizon, grid.dt)?;
            let family = match family {
                Family::Feedback => ControlFamily::Feedback,
                Family::Deterministic => ControlFamily::Deterministic,
            };
            let estimator = match estimator {
                Estimator::Bsde => SpanEstimator::Bsde,
                Estimator::Forward => SpanEstimator::Forward,
            };
            let span = empirical_reachable_span(&model, &grid, controls, paths, seed, cli.tol, family, estimator)?;
            let report = SpanReport {
                closure_dim: nonlinear_closure(&model, cli.tol).dim(),
                span: &span,
            };
            write_json(out, &report)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
