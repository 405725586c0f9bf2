//! Ground-truth side: companion-form models, trajectory generation, switched
//! simulation under dwell-time constrained signals, and the Monte Carlo GAS
//! check.
//!
//! Nothing in `psi`, `lmi` or `dwell` reads a [`SubsystemModel`]; models only
//! produce data and validate results.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SubsystemDataset, Trace};
use crate::linalg::{norm2, stein_feasibility_oracle, LinalgError, Matrix};
use crate::psi::{find_psi, PsiError};

/// Models with `|a₀|` below this are rejected as rank deficient.
pub const RANK_GUARD: f64 = 1e-12;

/// Rate used for the Schur test, slightly inside the unit circle.
pub const SCHUR_TEST_RATE: f64 = 1.0 - 1e-9;

pub const MAX_MODEL_ATTEMPTS: usize = 10_000;
pub const MAX_INITIAL_STATE_ATTEMPTS: usize = 1_000;

/// A run passes when `‖x(horizon)‖ ≤ DECAY_THRESHOLD · max(1, ‖x(0)‖)`.
pub const DECAY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("a0 = {a0:e} makes the companion matrix rank deficient")]
    Rank { a0: f64 },
    #[error("{0}")]
    Precondition(String),
    #[error("{}generation failed after {attempts} attempts: {message}", .subsystem.map(|s| format!("subsystem {s}: ")).unwrap_or_default())]
    Generation { subsystem: Option<usize>, attempts: usize, message: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Psi(#[from] PsiError),
}

/// `x(t+1) = A x(t)` with `A` in companion form: first row
/// `(−a_{d−1}, .., −a₁, −a₀)`, ones on the subdiagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    coefficients: Vec<f64>,
    matrix: Matrix,
}

impl SubsystemModel {
    /// `a₀, .., a_{d−1}`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dimension(&self) -> usize {
        self.coefficients.len()
    }

    /// One step of the recursion.
    pub fn step(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }
}

/// Companion model without the rank guard; allows singular `A` such as the
/// nilpotent shift.
pub fn companion_unchecked(coefficients: &[f64]) -> SubsystemModel {
    let d = coefficients.len();
    let mut matrix = Matrix::zeros(d, d);
    for (j, &a) in coefficients.iter().rev().enumerate() {
        matrix[(0, j)] = -a;
    }
    for i in 1..d {
        matrix[(i, i - 1)] = 1.0;
    }
    SubsystemModel { coefficients: coefficients.to_vec(), matrix }
}

pub fn companion_from_coeffs(coefficients: &[f64]) -> Result<SubsystemModel, SimError> {
    if coefficients.is_empty() {
        return Err(SimError::Precondition("a model needs at least one coefficient".into()));
    }
    if let Some(a) = coefficients.iter().find(|a| !a.is_finite()) {
        return Err(SimError::Precondition(format!("coefficient {a} is not finite")));
    }
    if coefficients[0].abs() < RANK_GUARD {
        return Err(SimError::Rank { a0: coefficients[0] });
    }
    Ok(companion_unchecked(coefficients))
}

/// Schur stability through the Stein test at [`SCHUR_TEST_RATE`].
pub fn is_schur_stable(model: &SubsystemModel) -> Result<bool, SimError> {
    Ok(stein_feasibility_oracle(&model.matrix, SCHUR_TEST_RATE)?.feasible)
}

/// Rejection-samples coefficients uniform in `[−1, 1]^d` until the model is
/// Schur stable and full rank.
pub fn random_schur_companion<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<SubsystemModel, SimError> {
    if d == 0 {
        return Err(SimError::Precondition("dimension must be >= 1".into()));
    }
    for _ in 0..MAX_MODEL_ATTEMPTS {
        let coefficients: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let Ok(model) = companion_from_coeffs(&coefficients) else { continue };
        if is_schur_stable(&model)? {
            return Ok(model);
        }
    }
    Err(SimError::Generation {
        subsystem: None,
        attempts: MAX_MODEL_ATTEMPTS,
        message: format!("no Schur-stable companion model of dimension {d}"),
    })
}

fn simulate_states(model: &SubsystemModel, x0: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    for t in 0..steps {
        let next = model.step(&states[t]);
        states.push(next);
    }
    states
}

/// `x(0), .., x(steps)` along one subsystem.
pub fn simulate_subsystem(model: &SubsystemModel, x0: &[f64], steps: usize) -> Result<Trace, SimError> {
    if x0.len() != model.dimension() {
        return Err(SimError::Precondition(format!(
            "initial state has dimension {}, model has {}",
            x0.len(),
            model.dimension()
        )));
    }
    Ok(Trace::new(simulate_states(model, x0, steps))?)
}

fn check_models(models: &[SubsystemModel]) -> Result<usize, SimError> {
    let d = models.first().map(SubsystemModel::dimension).ok_or_else(|| SimError::Precondition("no models".into()))?;
    if models.iter().any(|m| m.dimension() != d) {
        return Err(SimError::Precondition("models have different dimensions".into()));
    }
    Ok(d)
}

fn check_length(models: &[SubsystemModel], length: usize) -> Result<usize, SimError> {
    let d = check_models(models)?;
    if length < d {
        return Err(SimError::Precondition(format!("trace length L = {length} must be >= d = {d}")));
    }
    Ok(d)
}

/// One trace per model with `x(0)` uniform in `[−1, 1]^d`, redrawn until a
/// valid `Ψ` exists at tolerance `tol`.
pub fn generate_dataset<R: Rng + ?Sized>(
    models: &[SubsystemModel],
    length: usize,
    rng: &mut R,
    tol: f64,
) -> Result<SubsystemDataset, SimError> {
    let d = check_length(models, length)?;
    let mut traces = Vec::with_capacity(models.len());
    for (k, model) in models.iter().enumerate() {
        let mut last_error = None;
        let mut accepted = None;
        for _ in 0..MAX_INITIAL_STATE_ATTEMPTS {
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let trace = simulate_subsystem(model, &x0, length)?;
            match find_psi(&trace, tol) {
                Ok(_) => {
                    accepted = Some(trace);
                    break;
                }
                Err(e) => last_error = Some(e),
            }
        }
        match accepted {
            Some(trace) => traces.push(trace),
            None => {
                return Err(SimError::Generation {
                    subsystem: Some(k + 1),
                    attempts: MAX_INITIAL_STATE_ATTEMPTS,
                    message: last_error.map(|e| e.to_string()).unwrap_or_default(),
                })
            }
        }
    }
    Ok(SubsystemDataset::from_traces(traces)?)
}

/// Dataset from fixed initial states, one per model.
pub fn dataset_from_initial_states(
    models: &[SubsystemModel],
    initial_states: &[Vec<f64>],
    length: usize,
) -> Result<SubsystemDataset, SimError> {
    check_length(models, length)?;
    if initial_states.len() != models.len() {
        return Err(SimError::Precondition(format!(
            "{} initial states for {} models",
            initial_states.len(),
            models.len()
        )));
    }
    let traces = models
        .iter()
        .zip(initial_states)
        .map(|(m, x0)| simulate_subsystem(m, x0, length))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SubsystemDataset::from_traces(traces)?)
}

/// Piecewise-constant mode sequence; `modes[m]` is active on
/// `[instants[m], instants[m+1])` and the last mode stays active forever.
/// Modes index into the model list (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchingSignal {
    instants: Vec<usize>,
    modes: Vec<usize>,
}

impl SwitchingSignal {
    pub fn new(instants: Vec<usize>, modes: Vec<usize>) -> Result<Self, SimError> {
        if instants.is_empty() || instants.len() != modes.len() || instants[0] != 0 {
            return Err(SimError::Precondition("a signal starts at 0 with one mode per instant".into()));
        }
        if instants.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::Precondition("switching instants must increase strictly".into()));
        }
        if modes.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::Precondition("consecutive modes must differ".into()));
        }
        Ok(SwitchingSignal { instants, modes })
    }

    pub fn constant(mode: usize) -> Self {
        SwitchingSignal { instants: vec![0], modes: vec![mode] }
    }

    pub fn instants(&self) -> &[usize] {
        &self.instants
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn mode_at(&self, t: usize) -> usize {
        let idx = self.instants.partition_point(|&k| k <= t) - 1;
        self.modes[idx]
    }

    /// Every gap between consecutive switching instants is at least `tau`.
    pub fn satisfies_dwell(&self, tau: usize) -> bool {
        self.instants.windows(2).all(|w| w[1] - w[0] >= tau)
    }
}

/// Random signal with dwell durations uniform on `{τ, .., 2τ}` and each next
/// mode uniform over the other modes. Instants stop before `horizon`.
pub fn random_dwell_signal<R: Rng + ?Sized>(
    num_modes: usize,
    tau: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<SwitchingSignal, SimError> {
    if num_modes == 0 || tau == 0 {
        return Err(SimError::Precondition("need at least one mode and tau >= 1".into()));
    }
    let mut instants = vec![0];
    let mut modes = vec![rng.gen_range(0..num_modes)];
    if num_modes == 1 {
        return Ok(SwitchingSignal { instants, modes });
    }
    let mut t = 0;
    loop {
        t += rng.gen_range(tau..=2 * tau);
        if t >= horizon {
            break;
        }
        let current = *modes.last().unwrap();
        let mut next = rng.gen_range(0..num_modes - 1);
        if next >= current {
            next += 1;
        }
        instants.push(t);
        modes.push(next);
    }
    Ok(SwitchingSignal { instants, modes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedTrajectory {
    pub states: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

/// `x(t+1) = A_{σ(t)} x(t)` for `t < horizon`.
pub fn simulate_switched(
    models: &[SubsystemModel],
    signal: &SwitchingSignal,
    x0: &[f64],
    horizon: usize,
) -> Result<SwitchedTrajectory, SimError> {
    check_models(models)?;
    if x0.len() != models[0].dimension() {
        return Err(SimError::Precondition("initial state dimension does not match the models".into()));
    }
    if let Some(&m) = signal.modes.iter().find(|&&m| m >= models.len()) {
        return Err(SimError::Precondition(format!("signal uses mode {m} but only {} models exist", models.len())));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.to_vec());
    for t in 0..horizon {
        let next = models[signal.mode_at(t)].step(&states[t]);
        states.push(next);
    }
    let norms = states.iter().map(|x| norm2(x)).collect();
    Ok(SwitchedTrajectory { states, norms })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub switches: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub passed: bool,
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub tau: usize,
    pub horizon: usize,
    pub seed: u64,
    pub runs: Vec<RunRecord>,
}

/// Serializable summary of a Monte Carlo experiment (norm sequences excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub tau: usize,
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub threshold: f64,
    pub passed: usize,
    pub failed_runs: Vec<usize>,
    /// Largest `‖x(horizon)‖ / max(1, ‖x(0)‖)` over all runs.
    pub worst_final_ratio: f64,
}

impl MonteCarloReport {
    pub fn passed(&self) -> usize {
        self.runs.iter().filter(|r| r.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.runs.iter().all(|r| r.passed)
    }

    pub fn summary(&self) -> MonteCarloSummary {
        MonteCarloSummary {
            tau: self.tau,
            runs: self.runs.len(),
            horizon: self.horizon,
            seed: self.seed,
            threshold: DECAY_THRESHOLD,
            passed: self.passed(),
            failed_runs: self.runs.iter().filter(|r| !r.passed).map(|r| r.run).collect(),
            worst_final_ratio: self.runs.iter().map(|r| r.final_norm / r.initial_norm.max(1.0)).fold(0.0, f64::max),
        }
    }

    /// Writes the `run,t,norm` table.
    pub fn write_norms_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = io::BufWriter::new(out);
        writeln!(w, "run,t,norm")?;
        for r in &self.runs {
            for (t, n) in r.norms.iter().enumerate() {
                writeln!(w, "{},{},{:?}", r.run, t, n)?;
            }
        }
        w.flush()
    }
}

/// Generator for one Monte Carlo run, independent of scheduling.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Repeats: draw `x(0)` uniform in `[−1, 1]^d`, draw a random signal with
/// minimum dwell `tau`, simulate to `horizon`, and check the decay threshold.
pub fn monte_carlo_gas(
    models: &[SubsystemModel],
    tau: usize,
    runs: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloReport, SimError> {
    if runs == 0 {
        return Err(SimError::Precondition("runs must be >= 1".into()));
    }
    if tau == 0 {
        return Err(SimError::Precondition("tau must be >= 1".into()));
    }
    let d = check_models(models)?;
    let records = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(seed, run);
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let signal = random_dwell_signal(models.len(), tau, horizon, &mut rng)?;
            let traj = simulate_switched(models, &signal, &x0, horizon)?;
            let initial_norm = traj.norms[0];
            let final_norm = traj.norms[horizon];
            Ok(RunRecord {
                run,
                switches: signal.instants.len() - 1,
                initial_norm,
                final_norm,
                passed: final_norm <= DECAY_THRESHOLD * initial_norm.max(1.0),
                norms: traj.norms,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(MonteCarloReport { tau, horizon, seed, runs: records })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelsDoc {
    dimension: usize,
    models: Vec<ModelEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    id: usize,
    coefficients: Vec<f64>,
}

/// Parses a models document `{ "dimension": d, "models": [ { "id", "coefficients" } ] }`.
pub fn parse_models(text: &str) -> Result<Vec<SubsystemModel>, SimError> {
    let mut doc: ModelsDoc = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.models.is_empty() {
        return Err(DataError::validation(None, "models", "at least one model is required").into());
    }
    let n = doc.models.len();
    doc.models.sort_by_key(|m| m.id);
    for (k, m) in doc.models.iter().enumerate() {
        if m.id != k + 1 {
            return Err(DataError::validation(Some(m.id), "id", format!("ids must be exactly 1..={n}")).into());
        }
        if m.coefficients.len() != doc.dimension {
            return Err(DataError::validation(
                Some(m.id),
                "coefficients",
                format!("{} coefficients for dimension {}", m.coefficients.len(), doc.dimension),
            )
            .into());
        }
    }
    doc.models
        .iter()
        .map(|m| {
            companion_from_coeffs(&m.coefficients)
                .map_err(|e| DataError::validation(Some(m.id), "coefficients", e.to_string()).into())
        })
        .collect()
}

pub fn models_to_json(models: &[SubsystemModel]) -> String {
    let doc = ModelsDoc {
        dimension: models.first().map_or(0, SubsystemModel::dimension),
        models: models
            .iter()
            .enumerate()
            .map(|(k, m)| ModelEntry { id: k + 1, coefficients: m.coefficients.clone() })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("models serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_layout() {
        let m = companion_from_coeffs(&[0.25, 0.0]).unwrap();
        assert_eq!(m.matrix(), &Matrix::from_rows(&[[0.0, -0.25], [1.0, 0.0]]).unwrap());
        let m = companion_from_coeffs(&[0.5]).unwrap();
        assert_eq!(m.matrix(), &Matrix::from_rows(&[[-0.5]]).unwrap());
        let coeffs = [0.1, -0.2, 0.3];
        let m = companion_from_coeffs(&coeffs).unwrap();
        let read_back: Vec<f64> = m.matrix().row(0).iter().rev().map(|v| -v).collect();
        assert_eq!(read_back, coeffs);
        assert_eq!(m.matrix()[(2, 1)], 1.0);
        assert_eq!(m.matrix()[(2, 0)], 0.0);
    }

    #[test]
    fn rank_guard() {
        assert!(matches!(companion_from_coeffs(&[0.0, 0.5]), Err(SimError::Rank { .. })));
        assert!(companion_from_coeffs(&[]).is_err());
    }

    #[test]
    fn nilpotent_simulation() {
        let m = companion_unchecked(&[0.0, 0.0]);
        let tr = simulate_subsystem(&m, &[1.0, 0.0], 2).unwrap();
        assert_eq!(tr.states(), &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]);
        let zero = simulate_subsystem(&m, &[0.0, 0.0], 4).unwrap();
        assert!(zero.states().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn random_model_is_deterministic_and_stable() {
        let a = random_schur_companion(3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = random_schur_companion(3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(is_schur_stable(&a).unwrap());
        let scalar = random_schur_companion(1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(scalar.coefficients()[0].abs() <= 1.0);
    }

    #[test]
    fn dataset_length_precondition() {
        let m = companion_from_coeffs(&[0.1, 0.2, 0.3]).unwrap();
        let err = generate_dataset(&[m], 2, &mut ChaCha8Rng::seed_from_u64(0), 1e-8).unwrap_err();
        assert!(matches!(err, SimError::Precondition(_)));
    }

    #[test]
    fn signal_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let single = random_dwell_signal(1, 3, 100, &mut rng).unwrap();
        assert_eq!(single.instants(), &[0]);
        let s = random_dwell_signal(3, 3, 100, &mut rng).unwrap();
        assert!(s.satisfies_dwell(3));
        assert!(s.modes().windows(2).all(|w| w[0] != w[1]));
        assert!(*s.instants().last().unwrap() < 100);
        let again = random_dwell_signal(3, 3, 100, &mut ChaCha8Rng::seed_from_u64(3));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        random_dwell_signal(1, 3, 100, &mut rng).unwrap();
        assert_eq!(random_dwell_signal(3, 3, 100, &mut rng).unwrap(), s);
        assert!(again.is_ok());
        assert!(random_dwell_signal(2, 0, 100, &mut rng).is_err());
    }

    #[test]
    fn signal_lookup() {
        let s = SwitchingSignal::new(vec![0, 3, 7], vec![1, 0, 1]).unwrap();
        assert_eq!((0..9).map(|t| s.mode_at(t)).collect::<Vec<_>>(), vec![1, 1, 1, 0, 0, 0, 0, 1, 1]);
        assert!(s.satisfies_dwell(3));
        assert!(!s.satisfies_dwell(4));
        assert!(SwitchingSignal::new(vec![0, 3], vec![1, 1]).is_err());
        assert!(SwitchingSignal::new(vec![1], vec![0]).is_err());
    }

    #[test]
    fn switched_simulation_cases() {
        let nil = companion_unchecked(&[0.0, 0.0]);
        let traj =
            simulate_switched(std::slice::from_ref(&nil), &SwitchingSignal::constant(0), &[0.3, -0.7], 6).unwrap();
        assert!(traj.norms[2..].iter().all(|&n| n == 0.0));
        let m = companion_from_coeffs(&[0.2, -0.1]).unwrap();
        let zero = simulate_switched(&[m.clone(), nil], &SwitchingSignal::constant(0), &[0.0, 0.0], 5).unwrap();
        assert!(zero.norms.iter().all(|&n| n == 0.0));
        let single =
            simulate_switched(std::slice::from_ref(&m), &SwitchingSignal::constant(0), &[1.0, 0.5], 5).unwrap();
        assert_eq!(single.states, simulate_subsystem(&m, &[1.0, 0.5], 5).unwrap().states());
    }

    #[test]
    fn monte_carlo_preconditions() {
        let m = companion_from_coeffs(&[0.2, -0.1]).unwrap();
        assert!(monte_carlo_gas(std::slice::from_ref(&m), 0, 10, 50, 0).is_err());
        assert!(monte_carlo_gas(std::slice::from_ref(&m), 1, 0, 50, 0).is_err());
        let a = monte_carlo_gas(std::slice::from_ref(&m), 2, 1, 50, 9).unwrap();
        let b = monte_carlo_gas(&[m], 2, 1, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs[0].norms.len(), 51);
    }

    #[test]
    fn models_document() {
        let models = vec![companion_from_coeffs(&[0.1, 0.2]).unwrap(), companion_from_coeffs(&[-0.3, 0.4]).unwrap()];
        let back = parse_models(&models_to_json(&models)).unwrap();
        assert_eq!(back, models);
        let err = parse_models(r#"{"dimension":2,"models":[{"id":1,"coefficients":[0.0,0.1]}]}"#).unwrap_err();
        assert!(matches!(err, SimError::Data(DataError::Validation { subsystem: Some(1), .. })));
    }
}
