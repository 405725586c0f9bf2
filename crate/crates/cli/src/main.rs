//! `dwell`: generate subsystem data, compute stabilizing minimum dwell times,
//! recompute μ/τ from given certificates, and validate by simulation.

use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dwell_core::data::{
    dataset_from_csv, parse_certificate_set, parse_dataset, serialize_result, DataError, SubsystemDataset,
};
use dwell_core::dwell::{compute_min_dwell, dwell_from_certificates, AlgorithmConfig, DwellError};
use dwell_core::lmi::{SolverMethod, SolverOptions};
use dwell_core::sim::{
    dataset_from_initial_states, generate_dataset, models_to_json, monte_carlo_gas, parse_models,
    random_schur_companion, SimError, SubsystemModel,
};
use dwell_core::DwellTimeResult;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;
const EXIT_INPUT: u8 = 4;
const EXIT_GENERATION: u8 = 5;
const EXIT_VALIDATION: u8 = 6;
const EXIT_INTERNAL: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "dwell", version, about = "Data-driven minimum dwell times for switched linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate companion-form models and one trajectory per model.
    Generate(GenerateArgs),
    /// Compute λ_s, μ and τ from trajectory data.
    Compute(ComputeArgs),
    /// Recompute μ and τ from supplied Lyapunov matrices.
    Mu(MuArgs),
    /// Monte Carlo check of global asymptotic stability under dwell time τ.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    /// Number of random models (ignored with --coeffs).
    #[arg(long, required_unless_present = "coeffs")]
    modes: Option<usize>,
    /// State dimension of random models (ignored with --coeffs).
    #[arg(long, required_unless_present = "coeffs")]
    dim: Option<usize>,
    /// Trace length L; each trace holds L + 1 states.
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independence tolerance a generated trace must satisfy.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Fixed models document instead of random models.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    /// Fixed initial states `{"initial_states": [[..], ..]}`, one per model.
    #[arg(long)]
    initial_states: Option<PathBuf>,
    #[arg(long)]
    out_data: PathBuf,
    #[arg(long)]
    out_models: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Barrier,
    Subgradient,
}

impl From<Method> for SolverMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Barrier => SolverMethod::Barrier,
            Method::Subgradient => SolverMethod::Subgradient,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct ComputeArgs {
    /// Dataset document.
    #[arg(long, required_unless_present = "csv", conflicts_with = "csv")]
    data: Option<PathBuf>,
    /// One comma-separated trace per subsystem, in id order (repeatable).
    #[arg(long)]
    csv: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// σ_min/σ_max independence tolerance for Ψ.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 20000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = Method::Barrier)]
    method: Method,
    #[arg(long, default_value_t = 1e-8)]
    feas_tol: f64,
    /// Subgradient step constant.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Evaluate the whole grid and keep the smallest τ.
    #[arg(long)]
    optimize_tau: bool,
    /// Retry with h/10 when no grid point is feasible.
    #[arg(long)]
    h_refine: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MuArgs {
    /// Document with `lambda_s` and `certificates: [{id, P}]`.
    #[arg(long)]
    certificates: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Dataset to check the certificates against.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    tau: usize,
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_report: Option<PathBuf>,
    #[arg(long)]
    out_norms: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Display) -> Self {
        Failure { code, message: message.to_string() }
    }
}

impl From<DwellError> for Failure {
    fn from(e: DwellError) -> Self {
        let code = match &e {
            DwellError::InfeasibleGrid { .. } => EXIT_INFEASIBLE,
            DwellError::AssumptionViolated { .. } => EXIT_ASSUMPTION,
            DwellError::Domain(_) | DwellError::Data(_) | DwellError::NotPositiveDefinite { .. } => EXIT_INPUT,
            DwellError::Lmi { .. } | DwellError::Linalg(_) => EXIT_INTERNAL,
        };
        Failure::new(code, e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::Precondition(_) | SimError::Rank { .. } | SimError::Data(_) => EXIT_INPUT,
            SimError::Generation { .. } | SimError::Psi(_) => EXIT_GENERATION,
            SimError::Linalg(_) => EXIT_INTERNAL,
        };
        Failure::new(code, e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::new(EXIT_INPUT, e)
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_INPUT, format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> CmdResult {
    let fail = |e: &dyn Display| Failure::new(EXIT_INTERNAL, format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(contents).map_err(|e| fail(&e))?;
    tmp.as_file().sync_all().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

fn log_config(command: &str, config: &impl Serialize) {
    let text = serde_json::to_string(config).expect("configuration serializes");
    eprintln!("dwell {command}: {text}");
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialStates {
    initial_states: Vec<Vec<f64>>,
}

fn cmd_generate(args: &GenerateArgs) -> CmdResult {
    log_config("generate", args);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let models: Vec<SubsystemModel> = match &args.coeffs {
        Some(path) => parse_models(&read(path)?)?,
        None => {
            let (n, d) = (args.modes.unwrap_or(0), args.dim.unwrap_or(0));
            if n == 0 || d == 0 {
                return Err(Failure::new(EXIT_INPUT, "--modes and --dim must be >= 1"));
            }
            if args.length < d {
                return Err(Failure::new(EXIT_INPUT, format!("--length {} must be >= --dim {d}", args.length)));
            }
            (0..n).map(|_| random_schur_companion(d, &mut rng)).collect::<Result<_, _>>()?
        }
    };
    let dataset = match &args.initial_states {
        Some(path) => {
            let doc: InitialStates = serde_json::from_str(&read(path)?).map_err(DataError::from_json)?;
            dataset_from_initial_states(&models, &doc.initial_states, args.length)?
        }
        None => generate_dataset(&models, args.length, &mut rng, args.tol)?,
    };
    write_atomic(&args.out_models, models_to_json(&models).as_bytes())?;
    write_atomic(&args.out_data, dataset.to_json().as_bytes())?;
    println!(
        "generated {} subsystems, dimension {}, {} states each",
        dataset.len(),
        dataset.dimension(),
        args.length + 1
    );
    Ok(())
}

fn load_dataset(data: &Option<PathBuf>, csv: &[PathBuf]) -> Result<SubsystemDataset, Failure> {
    match data {
        Some(path) => Ok(parse_dataset(&read(path)?)?),
        None => {
            let texts = csv.iter().map(|p| read(p)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            Ok(dataset_from_csv(&refs)?)
        }
    }
}

fn report_result(result: &DwellTimeResult, out: &Option<PathBuf>) -> CmdResult {
    println!("lambda_s = {}", result.lambda_s());
    println!("mu = {}", result.mu());
    println!("tau = {}", result.tau());
    if let Some(path) = out {
        write_atomic(path, serialize_result(result).as_bytes())?;
    }
    Ok(())
}

fn cmd_compute(args: &ComputeArgs) -> CmdResult {
    let cfg = AlgorithmConfig {
        h: args.h,
        epsilon: args.eps,
        independence_tol: args.tol,
        solver: SolverOptions {
            method: args.method.into(),
            max_iterations: args.max_iter,
            feas_tol: args.feas_tol,
            step: args.step,
        },
        optimize_tau: args.optimize_tau,
        h_refine: args.h_refine,
    };
    log_config(
        "compute",
        &serde_json::json!({ "inputs": { "data": args.data, "csv": args.csv, "out": args.out }, "algorithm": cfg }),
    );
    let dataset = load_dataset(&args.data, &args.csv)?;
    let result = compute_min_dwell(&dataset, &cfg)?;
    report_result(&result, &args.out)
}

fn cmd_mu(args: &MuArgs) -> CmdResult {
    log_config("mu", args);
    let set = parse_certificate_set(&read(&args.certificates)?)?;
    let dataset = args.data.as_ref().map(|p| parse_dataset(&read(p)?).map_err(Failure::from)).transpose()?;
    let ps: Vec<_> = set.certificates.into_iter().map(|c| c.p).collect();
    let result = dwell_from_certificates(set.lambda_s, &ps, args.eps, dataset.as_ref().map(|d| (d, args.tol)))?;
    report_result(&result, &args.out)
}

fn cmd_validate(args: &ValidateArgs) -> CmdResult {
    log_config("validate", args);
    let models = parse_models(&read(&args.models)?)?;
    let report = monte_carlo_gas(&models, args.tau, args.runs, args.horizon, args.seed)?;
    let summary = report.summary();
    if let Some(path) = &args.out_report {
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_atomic(path, text.as_bytes())?;
    }
    if let Some(path) = &args.out_norms {
        let mut buf = Vec::new();
        report.write_norms_csv(&mut buf).map_err(|e| Failure::new(EXIT_INTERNAL, e))?;
        write_atomic(path, &buf)?;
    }
    println!("passed {}/{}", summary.passed, summary.runs);
    if summary.passed == summary.runs {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_VALIDATION,
            format!(
                "{} runs exceeded the decay threshold (first: run {})",
                summary.runs - summary.passed,
                summary.failed_runs[0]
            ),
        ))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INPUT),
            };
        }
    };
    let outcome = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Compute(a) => cmd_compute(a),
        Command::Mu(a) => cmd_mu(a),
        Command::Validate(a) => cmd_validate(a),
    };
    let _ = io::stdout().flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
