//! `recovery`: design, evaluate and verify near-optimal linear estimators.
//!
//! Exit status: 0 on success, 1 when a check fails, 2 on usage or
//! configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use recovery_core::config::{self, McConfig, ProblemConfig, SolverConfig};
use recovery_core::design::{self, DesignReport, LinearEstimator};
use recovery_core::noise::{self, BorellCheck, DensityDiagnostics, NoiseModel};
use recovery_core::oned::SimplestSetting;
use recovery_core::output::{fmt_f64, to_json};
use recovery_core::risk::{self, RiskEstimate};
use recovery_core::verify::{self, BatteryReport, RademacherDemo};
use recovery_core::{DVector, Error};

const THREADS_ENV: &str = "RECOVERY_THREADS";

#[derive(Parser)]
#[command(name = "recovery", version, about = "Near-optimal linear recovery of linear functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design the linear estimator and certify it against the null error.
    Design {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compute the null error.
    NullError {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Estimate a global recovery error of a linear map.
    Risk {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        /// Defaults to `mc.samples` (four times that for p > 2).
        #[arg(long)]
        samples: Option<usize>,
        /// Defaults to `mc.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated coefficients; the designed map when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        a: Option<Vec<f64>>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the near-optimality battery.
    Verify {
        /// Battery file, or `default`.
        #[arg(long, default_value = "default")]
        battery: String,
        #[arg(long, default_value_t = config::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = config::DEFAULT_SEED)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// CSV path; defaults to the report path with a `.csv` extension.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rademacher counterexample in the scalar setting.
    DemoRademacher {
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long)]
        sigma: f64,
        /// Write the JSON report here; the table always goes to stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Density floor, density at zero and Borell moment ratios.
    DiagnoseNoise {
        #[arg(long, value_enum)]
        kind: ScalarNoise,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = config::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = config::DEFAULT_SEED)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Se,
    Or,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalarNoise {
    Gaussian,
    Laplace,
    Uniform,
    Rademacher,
}

enum Failure {
    Usage(String),
    Check,
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Serialize)]
struct Settings {
    solver: SolverConfig,
    mc: McConfig,
}

#[derive(Serialize)]
struct DesignOutput<'a> {
    #[serde(flatten)]
    report: &'a DesignReport,
    settings: Settings,
}

#[derive(Serialize)]
struct NullErrorOutput {
    null_error: f64,
    settings: Settings,
}

#[derive(Serialize)]
struct RiskOutput {
    #[serde(flatten)]
    estimate: RiskEstimate,
    a: Vec<f64>,
    seed: u64,
    settings: Settings,
}

#[derive(Serialize)]
struct NoiseOutput {
    kind: &'static str,
    sigma: f64,
    log_concave: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    density: Option<DensityDiagnostics>,
    borell: Vec<BorellCheck>,
    pass: bool,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    to_json(value).map_err(|e| Failure::Usage(format!("serialisation failed: {e}")))
}

fn load(path: &Path) -> Result<ProblemConfig, Failure> {
    Ok(config::parse_config(&read(path)?)?)
}

fn settings(config: &ProblemConfig) -> Settings {
    Settings {
        solver: config.solver,
        mc: config.mc,
    }
}

fn run_design(path: &Path, out: Option<&Path>) -> Outcome {
    let config = load(path)?;
    let problem = config.problem()?;
    let (report, ok) = match design::design_linear(&problem, &config.solver_options()) {
        Ok(r) => (r, true),
        Err(Error::NotConverged(r)) => (*r, false),
        Err(e) => return Err(e.into()),
    };
    emit(
        &json(&DesignOutput {
            report: &report,
            settings: settings(&config),
        })?,
        out,
    )?;
    if ok {
        Ok(())
    } else {
        eprintln!("solver did not reach the requested duality gap");
        Err(Failure::Check)
    }
}

fn run_null_error(path: &Path, out: Option<&Path>) -> Outcome {
    let config = load(path)?;
    let problem = config.problem()?;
    let null_error = match design::null_error(&problem, &config.solver_options()) {
        Ok(v) => v,
        Err(Error::NotConverged(r)) => {
            eprintln!("solver did not reach the requested duality gap (gap {})", r.duality_gap);
            return Err(Failure::Check);
        }
        Err(e) => return Err(e.into()),
    };
    emit(
        &json(&NullErrorOutput {
            null_error,
            settings: settings(&config),
        })?,
        out,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_risk(
    path: &Path,
    kind: Kind,
    p: f64,
    samples: Option<usize>,
    seed: Option<u64>,
    a: Option<Vec<f64>>,
    out: Option<&Path>,
) -> Outcome {
    let config = load(path)?;
    let problem = config.problem()?;
    let map = match a {
        Some(a) => {
            if a.len() != problem.m() {
                return Err(Failure::Usage(format!("--a has {} entries, expected m = {}", a.len(), problem.m())));
            }
            LinearEstimator::new(DVector::from_vec(a))
        }
        None => match design::design_linear(&problem, &config.solver_options()) {
            Ok(r) => r.a_star,
            Err(Error::NotConverged(r)) => {
                eprintln!("warning: design gap {} above tolerance; using best iterate", r.duality_gap);
                r.a_star
            }
            Err(e) => return Err(e.into()),
        },
    };
    let count = samples.unwrap_or_else(|| verify::samples_for(p, config.mc.samples));
    let seed = seed.unwrap_or(config.mc.seed);
    let estimate = match kind {
        Kind::Se => risk::ge_se_linear(&problem, &map, p, count, seed)?,
        Kind::Or => risk::ge_or_linear(&problem, &map, p, count, seed)?,
    };
    emit(
        &json(&RiskOutput {
            estimate,
            a: map.a.clone(),
            seed,
            settings: settings(&config),
        })?,
        out,
    )
}

fn run_verify(battery: &str, samples: usize, seed: u64, out: Option<&Path>, csv: Option<PathBuf>) -> Outcome {
    let config = if battery == "default" {
        verify::default_battery()
    } else {
        verify::parse_battery(&read(Path::new(battery))?)?
    };
    if samples < 2 {
        return Err(Failure::Usage("--samples must be at least 2".into()));
    }
    let report: BatteryReport = verify::battery(&config, samples, seed);
    emit(&json(&report)?, out)?;
    let csv = csv.or_else(|| out.map(|p| p.with_extension("csv")));
    if let Some(path) = csv {
        emit(&verify::to_csv(&report), Some(&path))?;
    }
    let s = report.summary;
    eprintln!(
        "{} items: {} passed, {} failed; {} checks, {} failed, {} not applicable",
        s.items, s.passed, s.failed, s.checks, s.checks_failed, s.not_applicable
    );
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn demo_table(demo: &RademacherDemo) -> String {
    let mut rows: Vec<(&str, String)> = vec![
        ("b", fmt_f64(demo.b)),
        ("c", fmt_f64(demo.c)),
        ("tau", fmt_f64(demo.tau)),
        ("sigma", fmt_f64(demo.sigma)),
        ("regime", demo.regime.clone()),
        ("best linear risk", fmt_f64(demo.linear_optimum)),
    ];
    if let Some(est) = &demo.two_piece_or_2 {
        rows.push(("two-piece map or_2", fmt_f64(est.value)));
        rows.push(("linear / nonlinear", "unbounded".into()));
    }
    if let Some(bound) = demo.lower_bound {
        rows.push(("lower bound, all maps", fmt_f64(bound)));
    }
    if let Some(est) = &demo.linear_or_2 {
        rows.push(("best linear map or_2", fmt_f64(est.value)));
    }
    rows.push(("pass", demo.pass.to_string()));
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn run_demo(b: f64, c: f64, tau: f64, sigma: f64, out: Option<&Path>) -> Outcome {
    let setting = SimplestSetting::new(b, c, tau, sigma)?;
    let demo = verify::rademacher_demo(&setting)?;
    print!("{}", demo_table(&demo));
    if let Some(path) = out {
        emit(&json(&demo)?, Some(path))?;
    }
    if demo.pass {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn run_diagnose(kind: ScalarNoise, sigma: f64, samples: usize, seed: u64, out: Option<&Path>) -> Outcome {
    let model = match kind {
        ScalarNoise::Gaussian => NoiseModel::GaussianIso { sigma, m: 1 },
        ScalarNoise::Laplace => NoiseModel::LaplaceIid { sigma, m: 1 },
        ScalarNoise::Uniform => NoiseModel::UniformCube { sigma, m: 1 },
        ScalarNoise::Rademacher => NoiseModel::Rademacher { sigma },
    };
    model.validate()?;
    let density = match kind {
        ScalarNoise::Rademacher => None,
        _ => Some(noise::density_floor_check(&model)?),
    };
    let u = DVector::from_element(1, 1.0);
    let borell = [(1.0, 2.0), (1.0, 4.0), (2.0, 4.0)]
        .iter()
        .enumerate()
        .map(|(i, &(p, q))| {
            let s = recovery_core::rng::derive_seed(seed, i as u64);
            noise::borell_ratio_check(&model, &u, p, q, samples, s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let log_concave = model.is_log_concave();
    let pass = density.as_ref().map_or(true, |d| d.floor_ok && d.hensley_ok)
        && borell.iter().all(|b| b.pass || !b.applicable);
    let report = NoiseOutput {
        kind: model.kind(),
        sigma,
        log_concave,
        density,
        borell,
        pass,
    };
    emit(&json(&report)?, out)?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn configure_threads() -> Result<(), Failure> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot start worker pool: {e}")))
}

fn run(cli: Cli) -> Outcome {
    configure_threads()?;
    match cli.command {
        Command::Design { config, out } => run_design(&config, out.as_deref()),
        Command::NullError { config, out } => run_null_error(&config, out.as_deref()),
        Command::Risk {
            config,
            kind,
            p,
            samples,
            seed,
            a,
            out,
        } => run_risk(&config, kind, p, samples, seed, a, out.as_deref()),
        Command::Verify {
            battery,
            samples,
            seed,
            out,
            csv,
        } => run_verify(&battery, samples, seed, out.as_deref(), csv),
        Command::DemoRademacher { b, c, tau, sigma, out } => run_demo(b, c, tau, sigma, out.as_deref()),
        Command::DiagnoseNoise {
            kind,
            sigma,
            samples,
            seed,
            out,
        } => run_diagnose(kind, sigma, samples, seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
