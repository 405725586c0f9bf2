//! Published five-subsystem benchmark: models, traces and certificates.

mod common;

use dwell_core::lmi::{verify_certificate, LmiProblem};
use dwell_core::psi::{find_psi, DEFAULT_INDEPENDENCE_TOL};
use dwell_core::sim::{dataset_from_initial_states, generate_dataset, is_schur_stable, simulate_subsystem};

#[test]
fn models_reproduce_the_traces() {
    let models = common::benchmark_models();
    let x0 = common::benchmark_initial_states();
    let ds = common::benchmark_dataset();
    for ((model, x0), s) in models.iter().zip(&x0).zip(ds.subsystems()) {
        let tr = simulate_subsystem(model, x0, 5).unwrap();
        for (a, b) in tr.states().iter().flatten().zip(s.trace.states().iter().flatten()) {
            assert!((a - b).abs() <= 1e-6, "subsystem {}: {a} vs {b}", s.id);
        }
    }
    let rebuilt = dataset_from_initial_states(&models, &x0, 5).unwrap();
    assert_eq!(rebuilt.len(), 5);
}

#[test]
fn models_are_stable_below_the_published_rate() {
    for m in common::benchmark_models() {
        assert!(is_schur_stable(&m).unwrap());
        assert!(common::spectral_radius_sq(m.matrix()) < 0.7);
    }
}

#[test]
fn published_certificates_verify() {
    let ds = common::benchmark_dataset();
    for (s, p) in ds.subsystems().iter().zip(common::published_certificates()) {
        let psi = find_psi(&s.trace, DEFAULT_INDEPENDENCE_TOL).unwrap();
        let prob = LmiProblem::new(&psi, 0.7).unwrap();
        let (pd, lmi) = verify_certificate(&prob, &p).unwrap();
        assert!(pd > 0.0 && lmi > 0.0, "subsystem {}: margins {pd}, {lmi}", s.id);
    }
}

#[test]
fn generated_benchmark_data_is_usable() {
    let models = common::benchmark_models();
    let a = generate_dataset(&models, 5, &mut common::rng(5), DEFAULT_INDEPENDENCE_TOL).unwrap();
    let b = generate_dataset(&models, 5, &mut common::rng(5), DEFAULT_INDEPENDENCE_TOL).unwrap();
    assert_eq!(a, b);
    for s in a.subsystems() {
        assert!(find_psi(&s.trace, DEFAULT_INDEPENDENCE_TOL).is_ok());
    }
}
