//! Synthetic panel generators with known ground truth, plus brute-force
//! oracles used by the test suites.
//!
//! Presets encode the qualitative structure the estimators must handle:
//! upward selection on the outcome baseline (CONFOUNDED), covariate-driven
//! effect heterogeneity (STEP, LIS-HET), and calibration nulls (NULL,
//! CONST).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::Matrix;
use crate::panel::{CovariateKind, CovariateSchema, Observation, PanelDataset};

/// Named data-generating processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Preset {
    /// No effect anywhere (tau = 0).
    Null,
    /// Constant effect of 2 claims per 10 dollars.
    Const,
    /// tau = 1 + 2 * 1{x1 > 0}.
    Step,
    /// tau = 0.66 + 0.18 * 1{lis_share > 0.5}.
    LisHet,
    /// Constant tau = 2 with payment intensity increasing in the outcome
    /// baseline, so the uncontrolled regression is biased upward.
    Confounded,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Preset> {
        match name.to_ascii_lowercase().as_str() {
            "null" => Ok(Preset::Null),
            "const" => Ok(Preset::Const),
            "step" => Ok(Preset::Step),
            "lis-het" | "lis_het" | "lishet" => Ok(Preset::LisHet),
            "confounded" => Ok(Preset::Confounded),
            other => Err(Error::InvalidSpec(format!("unknown preset '{}'", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Null => "null",
            Preset::Const => "const",
            Preset::Step => "step",
            Preset::LisHet => "lis-het",
            Preset::Confounded => "confounded",
        }
    }
}

/// Generator parameters. `seed` fully determines the output.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DgpSpec {
    pub preset: Preset,
    pub n_units: usize,
    pub n_years: usize,
    pub seed: u64,
    /// Observation noise sd on the outcome.
    pub noise_sd: f64,
    /// Unit-level shock sd shared across a unit's years (cluster
    /// correlation).
    pub unit_sd: f64,
}

impl DgpSpec {
    pub fn new(preset: Preset, n_units: usize, n_years: usize, seed: u64) -> DgpSpec {
        let noise_sd = match preset {
            Preset::LisHet => 1.5,
            _ => 2.0,
        };
        DgpSpec { preset, n_units, n_years, seed, noise_sd, unit_sd: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.n_years == 0 {
            return Err(Error::InvalidSpec("n_units and n_years must be positive".into()));
        }
        if self.noise_sd < 0.0 || self.unit_sd < 0.0 {
            return Err(Error::InvalidSpec("noise sds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-row ground truth alongside the generated panel.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// True effect per 10 dollars, per row.
    pub tau: Vec<f64>,
    /// True probability of receiving any payment, per row.
    pub propensity: Vec<f64>,
    /// Outcome baseline E[y | x, p = 0], per row (excluding unit/year
    /// shocks).
    pub mu: Vec<f64>,
    /// E[p | x], per row.
    pub expected_payment: Vec<f64>,
    /// Mean of `tau` over rows.
    pub ate: f64,
}

pub fn covariate_schema() -> CovariateSchema {
    CovariateSchema {
        columns: vec![
            ("x1".into(), CovariateKind::Continuous),
            ("x2".into(), CovariateKind::Continuous),
            ("x3".into(), CovariateKind::Continuous),
            ("lis_share".into(), CovariateKind::Continuous),
            ("risk_score".into(), CovariateKind::Continuous),
            ("family_practitioner".into(), CovariateKind::Binary),
            ("male".into(), CovariateKind::Binary),
        ],
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Generates a reproducible panel plus its ground truth.
pub fn generate(spec: &DgpSpec) -> Result<(PanelDataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let norm = Normal::new(0.0, 1.0).unwrap();

    let schema = covariate_schema();
    let n_rows = spec.n_units * spec.n_years;
    let mut rows = Vec::with_capacity(n_rows);
    let mut tau_v = Vec::with_capacity(n_rows);
    let mut prop_v = Vec::with_capacity(n_rows);
    let mut mu_v = Vec::with_capacity(n_rows);
    let mut epay_v = Vec::with_capacity(n_rows);

    let year0 = 2014;
    for u in 0..spec.n_units {
        let unit_id = format!("u{:05}", u);
        let region = format!("r{:02}", u % 20);
        let state = if u % 2 == 0 { "A".to_string() } else { "B".to_string() };
        let unit_shock = spec.unit_sd * norm.sample(&mut rng);
        for t in 0..spec.n_years {
            let year = year0 + t as i32;
            let x1 = norm.sample(&mut rng);
            let x2 = norm.sample(&mut rng);
            let x3 = norm.sample(&mut rng);
            let lis: f64 = rng.gen();
            let risk = 1.2 + 0.25 * norm.sample(&mut rng);
            let family = if rng.gen::<f64>() < 0.6 { 1.0 } else { 0.0 };
            let male = if rng.gen::<f64>() < 0.7 { 1.0 } else { 0.0 };

            let tau = match spec.preset {
                Preset::Null => 0.0,
                Preset::Const | Preset::Confounded => 2.0,
                Preset::Step => 1.0 + 2.0 * f64::from(x1 > 0.0),
                Preset::LisHet => 0.66 + 0.18 * f64::from(lis > 0.5),
            };

            // Baseline prescription volume; kept well above zero.
            let mu = match spec.preset {
                Preset::Confounded => 100.0 + 25.0 * x1 + 5.0 * x2 + 8.0 * lis + 4.0 * risk,
                _ => 100.0 + 5.0 * x1 + 5.0 * x2 + 8.0 * lis + 4.0 * risk + 2.0 * family,
            };

            // Selection into treatment and payment intensity.
            let (e, intensity_mean) = match spec.preset {
                Preset::Confounded => {
                    let e = 0.15 + 0.5 * sigmoid(1.5 * x1);
                    (e, 40.0 + 25.0 * x1)
                }
                _ => {
                    let e = 0.25 + 0.2 * sigmoid(x2);
                    (e, 40.0 + 5.0 * x2)
                }
            };
            let treated = rng.gen::<f64>() < e;
            let payment = if treated {
                (intensity_mean + 8.0 * norm.sample(&mut rng)).max(1.0)
            } else {
                0.0
            };
            let expected_payment = e * intensity_mean.max(1.0);

            let year_shock = 0.5 * (t as f64 - (spec.n_years as f64 - 1.0) / 2.0);
            let y = mu
                + tau / 10.0 * payment
                + unit_shock
                + year_shock
                + spec.noise_sd * norm.sample(&mut rng);
            let outcome = y.max(0.0);
            let unit_cost = 500.0 + 20.0 * norm.sample(&mut rng);
            let outcome_cost = (outcome * unit_cost).max(0.0);

            rows.push(Observation {
                unit_id: unit_id.clone(),
                year,
                region: region.clone(),
                state: state.clone(),
                outcome,
                outcome_cost,
                treatment: payment,
                covariates: vec![x1, x2, x3, lis, risk, family, male],
            });
            tau_v.push(tau);
            prop_v.push(e);
            mu_v.push(mu);
            epay_v.push(expected_payment);
        }
    }

    let ate = crate::stats::mean(&tau_v);
    let ds = PanelDataset::new(rows, schema)?;
    Ok((ds, GroundTruth { tau: tau_v, propensity: prop_v, mu: mu_v, expected_payment: epay_v, ate }))
}

/// Dense normal-equations reference for least squares; the independent check
/// for the regression-based estimators. Capped at 10,000 rows.
pub fn oracle_ols(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if x.nrows() > 10_000 {
        return Err(Error::InvalidInput("oracle_ols: limited to 10,000 rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput("oracle_ols: shape mismatch".into()));
    }
    let xm = nalgebra::DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x.get(i, j));
    let yv = nalgebra::DVector::from_column_slice(y);
    Ok(linalg::least_squares(&xm, &yv)?.iter().cloned().collect())
}

/// Exhaustive nearest-neighbor match of each target score to a donor index.
/// Ties on distance resolve to the donor with the smallest absolute payment,
/// then the smallest donor id.
pub fn oracle_nn_match(
    target_scores: &[f64],
    donor_scores: &[f64],
    donor_payments: &[f64],
    donor_ids: &[String],
) -> Vec<usize> {
    assert_eq!(donor_scores.len(), donor_payments.len());
    assert_eq!(donor_scores.len(), donor_ids.len());
    assert!(!donor_scores.is_empty(), "oracle_nn_match: empty donors");
    target_scores
        .iter()
        .map(|&s| {
            let mut best = 0usize;
            for j in 1..donor_scores.len() {
                if better_match(s, donor_scores, donor_payments, donor_ids, j, best) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// True when donor `a` beats donor `b` for a target score under the
/// documented tie-break order.
pub fn better_match(
    score: f64,
    donor_scores: &[f64],
    donor_payments: &[f64],
    donor_ids: &[String],
    a: usize,
    b: usize,
) -> bool {
    let da = (donor_scores[a] - score).abs();
    let db = (donor_scores[b] - score).abs();
    if da != db {
        return da < db;
    }
    let pa = donor_payments[a].abs();
    let pb = donor_payments[b].abs();
    if pa != pb {
        return pa < pb;
    }
    donor_ids[a] < donor_ids[b]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn null_preset_has_zero_ate_and_const_has_two() {
        let (_, truth) = generate(&DgpSpec::new(Preset::Null, 200, 2, 1)).unwrap();
        assert_eq!(truth.ate, 0.0);
        assert!(truth.tau.iter().all(|&t| t == 0.0));

        let (_, truth) = generate(&DgpSpec::new(Preset::Const, 200, 2, 1)).unwrap();
        assert_eq!(truth.ate, 2.0);
        assert!(truth.tau.iter().all(|&t| t == 2.0));
    }

    #[test]
    fn same_seed_identical_output() {
        let spec = DgpSpec::new(Preset::Confounded, 150, 3, 42);
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&DgpSpec::new(Preset::Confounded, 150, 3, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_moments_near_spec() {
        let n = 4000;
        let (ds, _) = generate(&DgpSpec::new(Preset::Null, n, 1, 7)).unwrap();
        let tol = 3.0 / (n as f64).sqrt();
        let x1 = ds.column_values("x1").unwrap();
        assert!(crate::stats::mean(&x1).abs() < tol);
        assert!((crate::stats::sample_sd(&x1) - 1.0).abs() < tol);
        let lis = ds.column_values("lis_share").unwrap();
        assert!((crate::stats::mean(&lis) - 0.5).abs() < tol);
    }

    #[test]
    fn confounded_naive_slope_overstates_truth() {
        let (ds, truth) = generate(&DgpSpec::new(Preset::Confounded, 4000, 1, 5)).unwrap();
        let p = ds.column_values("treatment").unwrap();
        let y = ds.column_values("outcome").unwrap();
        let ones = vec![1.0; p.len()];
        let x = Matrix::from_rows(
            &ones.iter().zip(&p).map(|(o, pi)| vec![*o, *pi]).collect::<Vec<_>>(),
        );
        let beta = oracle_ols(&x, &y).unwrap();
        let naive_per_10 = beta[1] * 10.0;
        assert!(
            naive_per_10 > truth.ate * 1.25,
            "naive = {}, truth = {}",
            naive_per_10,
            truth.ate
        );
    }

    #[test]
    fn oracle_ols_recovers_exact_coefficients() {
        let x = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 3.0],
            vec![1.0, 4.0],
        ]);
        let y = vec![5.0, 8.0, 11.0, 14.0];
        let beta = oracle_ols(&x, &y).unwrap();
        assert_relative_eq!(beta[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(beta[1], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn nn_match_tie_breaks() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        // Donors at equal distance from 0.5; payments decide.
        let scores = vec![0.4, 0.6, 0.6];
        let payments = vec![10.0, 5.0, 5.0];
        let m = oracle_nn_match(&[0.5], &scores, &payments, &ids);
        // 0.4 and 0.6 tie on distance; payment 5 < 10, and id "b" < "c".
        assert_eq!(m[0], 1);

        let m = oracle_nn_match(&[0.35], &scores, &payments, &ids);
        assert_eq!(m[0], 0);
    }
}
