#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use dwell_core::data::{parse_certificate_set, parse_dataset, SubsystemDataset};
use dwell_core::linalg::Matrix;
use dwell_core::sim::{parse_models, random_schur_companion, SubsystemModel};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn benchmark_dataset() -> SubsystemDataset {
    parse_dataset(&fixture("benchmark_dataset.json")).unwrap()
}

pub fn benchmark_models() -> Vec<SubsystemModel> {
    parse_models(&fixture("benchmark_models.json")).unwrap()
}

pub fn benchmark_initial_states() -> Vec<Vec<f64>> {
    let v: serde_json::Value = serde_json::from_str(&fixture("benchmark_initial_states.json")).unwrap();
    serde_json::from_value(v["initial_states"].clone()).unwrap()
}

pub fn published_certificates() -> Vec<Matrix> {
    parse_certificate_set(&fixture("published_certificates.json"))
        .unwrap()
        .certificates
        .into_iter()
        .map(|c| c.p)
        .collect()
}

pub struct PublishedMu {
    pub mu: f64,
    pub tau: u64,
    pub matrix: Vec<Vec<f64>>,
}

pub fn published_mu() -> PublishedMu {
    let v: serde_json::Value = serde_json::from_str(&fixture("published_mu.json")).unwrap();
    PublishedMu {
        mu: v["mu"].as_f64().unwrap(),
        tau: v["tau"].as_u64().unwrap(),
        matrix: serde_json::from_value(v["mu_matrix"].clone()).unwrap(),
    }
}

/// Squared spectral radius from a general (nonsymmetric) eigensolver.
pub fn spectral_radius_sq(a: &Matrix) -> f64 {
    let m = DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
    m.complex_eigenvalues().iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` random Schur-stable companion models with `d` cycling over 2..=5.
pub fn random_models(count: usize, seed: u64) -> Vec<SubsystemModel> {
    let mut r = rng(seed);
    (0..count).map(|k| random_schur_companion(2 + k % 4, &mut r).unwrap()).collect()
}

pub fn lambda_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// `count` random models of dimension `d` with squared spectral radius below
/// `rho2_max`.
pub fn random_models_below(count: usize, d: usize, rho2_max: f64, seed: u64) -> Vec<SubsystemModel> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = random_schur_companion(d, &mut r).unwrap();
        if spectral_radius_sq(m.matrix()) < rho2_max {
            out.push(m);
        }
    }
    out
}
