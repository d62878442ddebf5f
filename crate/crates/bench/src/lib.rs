//! Shared fixtures for the criterion benchmarks.

use paneltx_core::matrix::Matrix;
use paneltx_core::synth::{generate, DgpSpec, GroundTruth, Preset};
use paneltx_core::PanelDataset;

/// A confounded panel plus the true nuisance vectors the benchmarks feed to
/// the causal forest.
pub struct BenchData {
    pub ds: PanelDataset,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
}

pub fn bench_data(n_units: usize, seed: u64) -> BenchData {
    let (ds, truth) = generate(&DgpSpec::new(Preset::Confounded, n_units, 1, seed)).unwrap();
    let x = ds.covariate_matrix();
    let y = ds.column_values("outcome").unwrap();
    let p = ds.column_values("treatment").unwrap();
    let (y_hat, p_hat) = true_nuisances(&truth);
    BenchData { ds, x, y, p, y_hat, p_hat }
}

pub fn true_nuisances(truth: &GroundTruth) -> (Vec<f64>, Vec<f64>) {
    let y_hat: Vec<f64> = (0..truth.tau.len())
        .map(|i| truth.mu[i] + truth.tau[i] / 10.0 * truth.expected_payment[i])
        .collect();
    (y_hat, truth.expected_payment.clone())
}
