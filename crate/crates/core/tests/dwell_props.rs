mod common;

use dwell_core::data::SubsystemDataset;
use dwell_core::dwell::{
    compute_min_dwell, dwell_time, line_search_lambda, mu_max, mu_pairwise, mu_pairwise_with_direction, rate_grid,
    AlgorithmConfig, DwellError,
};
use dwell_core::linalg::Matrix;
use dwell_core::lmi::{solve_feasibility, LmiProblem};
use dwell_core::psi::{find_psi, PsiMatrix, DEFAULT_INDEPENDENCE_TOL};
use dwell_core::sim::{
    companion_from_coeffs, companion_unchecked, generate_dataset, random_dwell_signal, simulate_subsystem,
    simulate_switched, SubsystemModel,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_pd(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let b = Matrix::from_row_major(d, d, (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    &(&b.transpose() * &b) + &Matrix::identity(d).scale(0.1)
}

fn random_certificate_sets() -> Vec<Vec<Matrix>> {
    let mut rng = common::rng(41);
    (0..30)
        .map(|k| {
            let d = 1 + k % 5;
            let n = 1 + k % 4;
            (0..n).map(|_| random_pd(d, &mut rng)).collect()
        })
        .collect()
}

fn dataset_for(models: &[SubsystemModel], seed: u64) -> SubsystemDataset {
    let d = models[0].dimension();
    generate_dataset(models, d + 2, &mut common::rng(seed), DEFAULT_INDEPENDENCE_TOL).unwrap()
}

fn psis(ds: &SubsystemDataset) -> Vec<PsiMatrix> {
    ds.subsystems().iter().map(|s| find_psi(&s.trace, DEFAULT_INDEPENDENCE_TOL).unwrap()).collect()
}

#[test]
fn mu_matrix_invariants() {
    for set in random_certificate_sets() {
        let (mu, matrix) = mu_max(&set).unwrap();
        let n = set.len();
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            assert!((matrix[(i, i)] - 1.0).abs() <= 1e-9);
            for j in 0..n {
                assert!(matrix[(i, j)] * matrix[(j, i)] >= 1.0 - 1e-9);
                max = max.max(matrix[(i, j)]);
            }
        }
        assert_eq!(mu, max);
        if n >= 2 {
            assert!(mu > 1.0);
        }
    }
}

#[test]
fn mu_bounds_sampled_quadratic_forms() {
    let mut rng = common::rng(42);
    for set in random_certificate_sets() {
        let d = set[0].rows();
        for p_i in &set {
            for p_j in &set {
                let mu = mu_pairwise(p_i, p_j).unwrap();
                for _ in 0..1000 {
                    let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let (vj, vi) = (p_j.quadratic_form(&xi), p_i.quadratic_form(&xi));
                    assert!(vj <= (mu + 1e-9 * mu) * vi);
                }
            }
        }
    }
}

#[test]
fn mu_is_attained() {
    for set in random_certificate_sets() {
        for p_i in &set {
            for p_j in &set {
                let (mu, v) = mu_pairwise_with_direction(p_i, p_j).unwrap();
                let ratio = p_j.quadratic_form(&v) / p_i.quadratic_form(&v);
                assert!((ratio - mu).abs() <= 1e-8 * mu);
            }
        }
    }
}

#[test]
fn published_mu_matrix() {
    let published = common::published_mu();
    let (mu, matrix) = mu_max(&common::published_certificates()).unwrap();
    for (i, row) in published.matrix.iter().enumerate() {
        for (j, &expected) in row.iter().enumerate() {
            assert!((matrix[(i, j)] - expected).abs() <= 1e-4, "mu[{i}][{j}] = {} vs {expected}", matrix[(i, j)]);
        }
    }
    assert!((mu - published.mu).abs() <= 1e-4);
    assert!((matrix[(4, 2)] - mu).abs() < 1e-12);
    assert_eq!(dwell_time(mu, 0.7, 0.01).unwrap(), published.tau);
}

#[test]
fn dwell_time_is_monotone() {
    let mus: Vec<f64> = (0..=89).map(|k| 1.1 + k as f64 / 10.0).collect();
    let lambdas: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    for &l in &lambdas {
        let taus: Vec<u64> = mus.iter().map(|&m| dwell_time(m, l, 0.01).unwrap()).collect();
        assert!(taus.windows(2).all(|w| w[0] <= w[1]));
    }
    for &m in &mus {
        let taus: Vec<u64> = lambdas.iter().map(|&l| dwell_time(m, l, 0.01).unwrap()).collect();
        assert!(taus.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn line_search_returns_minimal_grid_point() {
    let cfg = AlgorithmConfig::default();
    for k in 0..4 {
        let group = common::random_models_below(3, 2 + k, 0.85, 43 + k as u64);
        let ps = psis(&dataset_for(&group, 500 + k as u64));
        let found = line_search_lambda(&ps, &cfg).unwrap();
        for &l in rate_grid(cfg.h).unwrap().iter().filter(|&&l| l < found.lambda_s - 1e-12) {
            let all = ps
                .iter()
                .all(|p| solve_feasibility(&LmiProblem::new(p, l).unwrap(), &cfg.solver).unwrap().is_feasible());
            assert!(!all, "grid point {l} below {} is feasible", found.lambda_s);
        }
    }
}

#[test]
fn nilpotent_subsystem_has_smallest_rate() {
    let tr = simulate_subsystem(&companion_unchecked(&[0.0, 0.0]), &[1.0, 0.0], 2).unwrap();
    let ds = SubsystemDataset::from_traces(vec![tr]).unwrap();
    let r = compute_min_dwell(&ds, &AlgorithmConfig::default()).unwrap();
    assert_eq!(r.lambda_s(), 0.1);
    assert_eq!(r.mu(), 1.0);
    assert_eq!(r.tau(), 1);
}

#[test]
fn unstable_subsystem_exhausts_the_grid() {
    // Roots 1.2 and 0.5.
    let unstable = companion_from_coeffs(&[0.6, -1.7]).unwrap();
    let stable = companion_from_coeffs(&[0.1, 0.2]).unwrap();
    let ds = dataset_for(&[stable, unstable], 44);
    for h_refine in [false, true] {
        let cfg = AlgorithmConfig { h_refine, ..Default::default() };
        match compute_min_dwell(&ds, &cfg) {
            Err(DwellError::InfeasibleGrid { infeasible_subsystems, .. }) => assert_eq!(infeasible_subsystems, vec![2]),
            other => panic!("expected infeasible grid, got {other:?}"),
        }
    }
}

#[test]
fn single_stable_subsystem() {
    let ds = dataset_for(&common::random_models_below(1, 3, 0.85, 45), 46);
    let r = compute_min_dwell(&ds, &AlgorithmConfig::default()).unwrap();
    assert_eq!(r.mu(), 1.0);
    assert_eq!(r.tau(), 1);
}

#[test]
fn optimized_tau_is_never_larger() {
    for k in 0..4 {
        let models = common::random_models_below(2, 2 + k % 2, 0.85, 47 + k as u64);
        let ds = dataset_for(&models, 600 + k as u64);
        let plain = compute_min_dwell(&ds, &AlgorithmConfig::default()).unwrap();
        let opt = compute_min_dwell(&ds, &AlgorithmConfig { optimize_tau: true, ..Default::default() }).unwrap();
        assert!(opt.tau() <= plain.tau());
        assert!(opt.lambda_s() >= plain.lambda_s());
    }
}

#[test]
fn benchmark_rate() {
    let r = compute_min_dwell(&common::benchmark_dataset(), &AlgorithmConfig::default()).unwrap();
    assert_eq!(r.lambda_s(), 0.7);
    assert!(r.mu() > 1.0);
    assert_eq!(r.tau(), dwell_time(r.mu(), 0.7, 0.01).unwrap());
}

#[test]
fn lyapunov_decay_inside_dwell_blocks() {
    let models = common::benchmark_models();
    let r = compute_min_dwell(&common::benchmark_dataset(), &AlgorithmConfig::default()).unwrap();
    let ps: Vec<&Matrix> = r.certificates().iter().map(|c| &c.p).collect();
    let mut rng = common::rng(48);
    for _ in 0..50 {
        let x0: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let signal = random_dwell_signal(5, r.tau() as usize, 200, &mut rng).unwrap();
        assert!(signal.satisfies_dwell(r.tau() as usize));
        assert!(signal.modes().windows(2).all(|w| w[0] != w[1]));
        let traj = simulate_switched(&models, &signal, &x0, 200).unwrap();
        for t in 0..200 {
            let p = ps[signal.mode_at(t)];
            let (v0, v1) = (p.quadratic_form(&traj.states[t]), p.quadratic_form(&traj.states[t + 1]));
            assert!(v1 <= r.lambda_s() * v0 + 1e-9 * v0.max(f64::MIN_POSITIVE));
        }
    }
}
