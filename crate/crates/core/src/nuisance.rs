//! Nuisance estimation for residualization: a coordinate-descent lasso with
//! fixed effects for outcomes, regression-forest treatment predictions, and
//! K-fold cross-fitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig};
use crate::matrix::Matrix;
use crate::panel::PanelDataset;
use crate::stats;

const LASSO_TOL: f64 = 1e-7;
const LASSO_MAX_SWEEPS: usize = 100_000;

/// Fitted lasso with convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub final_max_change: f64,
}

impl LassoModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.intercept
                    + x.row(i)
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(v, b)| v * b)
                        .sum::<f64>()
            })
            .collect()
    }
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on (1/2n) * ||y - b0 - X beta||^2 + lambda *
/// ||beta||_1 with soft-threshold updates. Converges when the largest
/// coordinate change in a sweep falls below 1e-7.
pub fn fit_lasso(x: &Matrix, y: &[f64], lambda: f64) -> Result<LassoModel> {
    let (model, _) = fit_lasso_traced(x, y, lambda, None)?;
    Ok(model)
}

/// As [`fit_lasso`] but records the objective after each sweep and accepts a
/// warm start. Used by the path solver and by tests checking monotone
/// descent.
pub fn fit_lasso_traced(
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    warm_start: Option<&LassoModel>,
) -> Result<(LassoModel, Vec<f64>)> {
    let n = x.nrows();
    let k = x.ncols();
    if n == 0 || n != y.len() {
        return Err(Error::InvalidInput("fit_lasso: shape mismatch".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidInput("fit_lasso: lambda must be >= 0".into()));
    }

    let col_sq: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| x.get(i, j) * x.get(i, j)).sum::<f64>() / n as f64)
        .collect();

    let mut beta = vec![0.0; k];
    let mut intercept = stats::mean(y);
    if let Some(w) = warm_start {
        if w.coefficients.len() == k {
            beta = w.coefficients.clone();
            intercept = w.intercept;
        }
    }
    // residual = y - intercept - X beta
    let mut residual: Vec<f64> = (0..n)
        .map(|i| {
            y[i] - intercept
                - x.row(i).iter().zip(&beta).map(|(v, b)| v * b).sum::<f64>()
        })
        .collect();

    let objective = |residual: &[f64], beta: &[f64]| -> f64 {
        residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * n as f64)
            + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    };

    let mut objective_path = Vec::new();
    let mut final_max_change = f64::INFINITY;
    for sweep in 0..LASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..k {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = (0..n).map(|i| x.get(i, j) * residual[i]).sum::<f64>() / n as f64
                + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                let delta = new - old;
                for i in 0..n {
                    residual[i] -= delta * x.get(i, j);
                }
                beta[j] = new;
            }
            max_change = max_change.max((new - old).abs());
        }
        // Intercept step (unpenalized mean of the residual).
        let shift = stats::mean(&residual);
        intercept += shift;
        for r in residual.iter_mut() {
            *r -= shift;
        }
        max_change = max_change.max(shift.abs());

        objective_path.push(objective(&residual, &beta));
        final_max_change = max_change;
        if max_change < LASSO_TOL {
            return Ok((
                LassoModel {
                    coefficients: beta,
                    intercept,
                    lambda,
                    iterations: sweep + 1,
                    final_max_change,
                },
                objective_path,
            ));
        }
    }
    Err(Error::NoConvergence(format!(
        "fit_lasso: max coordinate change {} after {} sweeps",
        final_max_change, LASSO_MAX_SWEEPS
    )))
}

/// Smallest lambda that zeroes every coefficient, computed on the centered
/// response.
pub fn lambda_max(x: &Matrix, y: &[f64]) -> f64 {
    let n = x.nrows();
    let my = stats::mean(y);
    (0..x.ncols())
        .map(|j| {
            ((0..n).map(|i| x.get(i, j) * (y[i] - my)).sum::<f64>() / n as f64).abs()
        })
        .fold(0.0_f64, f64::max)
}

/// Descending log-spaced grid from lambda_max down to ratio * lambda_max.
pub fn lambda_grid(x: &Matrix, y: &[f64], points: usize, ratio: f64) -> Vec<f64> {
    let top = lambda_max(x, y).max(1e-12);
    let lo = top * ratio;
    if points <= 1 {
        return vec![top];
    }
    (0..points)
        .map(|i| {
            // Exact endpoints: exp(ln x) can land an ulp off, which matters
            // at the lambda_max kill boundary.
            if i == 0 {
                top
            } else if i == points - 1 {
                lo
            } else {
                let t = i as f64 / (points - 1) as f64;
                (top.ln() + t * (lo.ln() - top.ln())).exp()
            }
        })
        .collect()
}

/// Fold assignment stratified by the treated flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub k: usize,
    /// Fold index per row, in 0..k.
    pub fold: Vec<usize>,
    pub seed: u64,
}

impl CrossFitPlan {
    /// Deals shuffled treated rows and shuffled control rows round-robin so
    /// every fold contains at least one of each.
    pub fn stratified(treated: &[bool], k: usize, seed: u64) -> Result<CrossFitPlan> {
        if k < 2 {
            return Err(Error::InvalidConfig("cross-fit folds must be >= 2".into()));
        }
        let n_treated = treated.iter().filter(|&&t| t).count();
        let n_control = treated.len() - n_treated;
        if n_treated < k || n_control < k {
            return Err(Error::InvalidInput(format!(
                "stratified folds need >= {} treated and control rows (have {} and {})",
                k, n_treated, n_control
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fold = vec![0usize; treated.len()];
        for flag in [true, false] {
            let mut idx: Vec<usize> =
                (0..treated.len()).filter(|&i| treated[i] == flag).collect();
            idx.shuffle(&mut rng);
            for (pos, &i) in idx.iter().enumerate() {
                fold[i] = pos % k;
            }
        }
        Ok(CrossFitPlan { k, fold, seed })
    }

    pub fn rows_in_fold(&self, fold: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&i| self.fold[i] == fold).collect()
    }

    pub fn rows_out_of_fold(&self, fold: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&i| self.fold[i] != fold).collect()
    }
}

/// Picks the lambda minimizing K-fold mean squared error, resolving ties to
/// the larger (sparser) lambda. Losses within one standard error of the
/// minimum count as ties: the cross-validation curve is itself noisy, and a
/// strict argmin would routinely keep spurious coefficients on null data.
pub fn select_lambda(x: &Matrix, y: &[f64], plan: &CrossFitPlan, grid: &[f64]) -> Result<f64> {
    select_lambda_with_tolerance(x, y, plan, grid, 1.0)
}

/// [`select_lambda`] with an explicit near-tie width in standard errors.
pub fn select_lambda_with_tolerance(
    x: &Matrix,
    y: &[f64],
    plan: &CrossFitPlan,
    grid: &[f64],
    tolerance_se: f64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("select_lambda: empty grid".into()));
    }
    if x.nrows() != y.len() || x.nrows() != plan.fold.len() {
        return Err(Error::InvalidInput("select_lambda: shape mismatch".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    // fold_mse[fold][grid index]
    let mut fold_mse = vec![vec![0.0_f64; sorted.len()]; plan.k];
    for fold in 0..plan.k {
        let train = plan.rows_out_of_fold(fold);
        let test = plan.rows_in_fold(fold);
        let x_train = x.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let x_test = x.select_rows(&test);
        let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();

        let mut warm: Option<LassoModel> = None;
        for (gi, &lambda) in sorted.iter().enumerate() {
            let (model, _) = fit_lasso_traced(&x_train, &y_train, lambda, warm.as_ref())?;
            let preds = model.predict(&x_test);
            fold_mse[fold][gi] = preds
                .iter()
                .zip(&y_test)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / test.len().max(1) as f64;
            warm = Some(model);
        }
    }

    let mean_mse: Vec<f64> = (0..sorted.len())
        .map(|gi| (0..plan.k).map(|f| fold_mse[f][gi]).sum::<f64>() / plan.k as f64)
        .collect();
    let mut best = 0usize;
    for gi in 1..sorted.len() {
        if mean_mse[gi] < mean_mse[best] {
            best = gi;
        }
    }
    // Standard error of the minimizing point's CV mean across folds.
    let at_best: Vec<f64> = (0..plan.k).map(|f| fold_mse[f][best]).collect();
    let se = stats::sample_sd(&at_best) / (plan.k as f64).sqrt();
    let threshold = mean_mse[best] + tolerance_se * se;
    let chosen = (0..sorted.len())
        .find(|&gi| mean_mse[gi] <= threshold)
        .unwrap_or(best);
    Ok(sorted[chosen])
}

/// Outcome-side learner settings: lasso on fixed-effect-demeaned,
/// standardized covariates.
#[derive(Debug, Clone)]
pub struct OutcomeLearnerSpec {
    /// Fixed lambda; when absent it is selected by K-fold cross-validation
    /// on a 50-point descending grid down to 1e-4 * lambda_max.
    pub lambda: Option<f64>,
    pub grid_points: usize,
    /// Fixed-effect keys absorbed before the lasso.
    pub fe_keys: Vec<String>,
}

impl Default for OutcomeLearnerSpec {
    fn default() -> Self {
        OutcomeLearnerSpec {
            lambda: None,
            grid_points: 50,
            fe_keys: vec!["unit".into(), "year".into(), "region".into()],
        }
    }
}

/// Treatment-side learner settings: regression forest on raw covariates,
/// optionally augmented with the most recent treatment lag.
#[derive(Debug, Clone)]
pub struct TreatmentLearnerSpec {
    pub forest: ForestConfig,
    pub use_lagged_treatment: bool,
}

impl TreatmentLearnerSpec {
    pub fn with_trees(num_trees: usize, seed: u64) -> TreatmentLearnerSpec {
        // mtry is re-derived once the feature count is known.
        let mut forest = ForestConfig::default_for(1);
        forest.num_trees = num_trees;
        forest.master_seed = seed;
        TreatmentLearnerSpec { forest, use_lagged_treatment: false }
    }
}

/// Cross-fitted residuals with fold provenance.
#[derive(Debug, Clone)]
pub struct Residuals {
    /// Outcome residual on the fixed-effect-demeaned scale.
    pub gamma_y: Vec<f64>,
    /// Treatment residual after removing the forest prediction and the same
    /// fixed-effect projection applied to the outcome.
    pub gamma_p: Vec<f64>,
    pub fold: Vec<usize>,
    /// Demeaned outcome fed to the residual regression (gamma_y =
    /// y_transformed - prediction).
    pub y_transformed: Vec<f64>,
    /// Correlation of out-of-fold outcome predictions with the demeaned
    /// outcome.
    pub outcome_fit_correlation: f64,
    /// Correlation of out-of-fold treatment predictions with the raw
    /// treatment.
    pub treatment_fit_correlation: f64,
    pub selected_lambda: f64,
}

impl Residuals {
    /// CSV export: unit_id, year, gamma_y, gamma_p, fold.
    pub fn to_csv_string(&self, ds: &PanelDataset) -> String {
        let mut out = String::from("unit_id,year,gamma_y,gamma_p,fold\n");
        for (i, obs) in ds.rows().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:.12},{:.12},{}\n",
                obs.unit_id, obs.year, self.gamma_y[i], self.gamma_p[i], self.fold[i]
            ));
        }
        out
    }
}

/// Demeaned + standardized covariate design for the outcome lasso. Columns
/// that lose all variance under the fixed-effect projection are dropped.
fn lasso_design(ds: &PanelDataset, fe_keys: &[&str]) -> Result<Matrix> {
    let names = ds.schema().names();
    let demeaned = if fe_keys.is_empty() {
        ds.clone()
    } else {
        ds.within_transform(fe_keys, &names)?
    };
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for name in &names {
        let values = demeaned.column_values(name)?;
        let sd = stats::population_sd(&values);
        if sd > 1e-12 {
            let m = stats::mean(&values);
            columns.push(values.iter().map(|v| (v - m) / sd).collect());
        }
    }
    let n = ds.len();
    let k = columns.len();
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        for col in &columns {
            data.push(col[i]);
        }
    }
    Ok(Matrix::new(data, n, k))
}

/// Features for the treatment forest: raw covariates plus, optionally, the
/// most recent treatment lag.
fn treatment_features(ds: &PanelDataset, use_lag: bool) -> Matrix {
    let base = ds.covariate_matrix();
    if !use_lag {
        return base;
    }
    let lags = ds.lagged_treatment();
    let n = base.nrows();
    let k = base.ncols() + 1;
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        data.extend_from_slice(base.row(i));
        data.push(lags[i]);
    }
    Matrix::new(data, n, k)
}

/// Cross-fitted residualization: per fold, both learners are trained on the
/// other folds and predict the held-out fold.
pub fn residualize(
    ds: &PanelDataset,
    plan: &CrossFitPlan,
    outcome: &OutcomeLearnerSpec,
    treatment: &TreatmentLearnerSpec,
) -> Result<Residuals> {
    let n = ds.len();
    if plan.fold.len() != n {
        return Err(Error::InvalidInput("residualize: plan does not match dataset".into()));
    }

    let fe_keys: Vec<&str> = outcome.fe_keys.iter().map(|s| s.as_str()).collect();
    let y_transformed = if fe_keys.is_empty() {
        ds.column_values("outcome")?
    } else {
        ds.within_transform(&fe_keys, &["outcome"])?.column_values("outcome")?
    };
    let x_lasso = lasso_design(ds, &fe_keys)?;

    let lambda = match outcome.lambda {
        Some(l) => l,
        None => {
            let grid = lambda_grid(&x_lasso, &y_transformed, outcome.grid_points, 1e-4);
            select_lambda(&x_lasso, &y_transformed, plan, &grid)?
        }
    };

    let p_raw = ds.column_values("treatment")?;
    let x_forest = treatment_features(ds, treatment.use_lagged_treatment);
    let mut forest_cfg = treatment.forest.clone();
    forest_cfg.mtry = forest_cfg.mtry.clamp(1, x_forest.ncols());
    if forest_cfg.mtry == 1 && x_forest.ncols() > 1 {
        forest_cfg.mtry = ForestConfig::default_for(x_forest.ncols()).mtry;
    }

    let mut y_hat = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    for fold in 0..plan.k {
        let train = plan.rows_out_of_fold(fold);
        let test = plan.rows_in_fold(fold);

        let x_train = x_lasso.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y_transformed[i]).collect();
        let lasso = fit_lasso(&x_train, &y_train, lambda)?;
        let x_test = x_lasso.select_rows(&test);
        for (pos, &i) in test.iter().enumerate() {
            y_hat[i] = lasso.predict(&x_test)[pos];
        }

        let xf_train = x_forest.select_rows(&train);
        let p_train: Vec<f64> = train.iter().map(|&i| p_raw[i]).collect();
        let mut cfg = forest_cfg.clone();
        cfg.master_seed = stats::derive_seed(treatment.forest.master_seed, fold as u64);
        let model = forest::fit_regression_forest(&xf_train, &p_train, &cfg)?;
        let xf_test = x_forest.select_rows(&test);
        let preds = forest::predict_regression(&model, &xf_test)?;
        for (pos, &i) in test.iter().enumerate() {
            p_hat[i] = preds[pos];
        }
    }

    let gamma_y: Vec<f64> = y_transformed.iter().zip(&y_hat).map(|(a, b)| a - b).collect();

    // Treatment residual, then the same fixed-effect projection the outcome
    // side received; fixed effects are part of the conditioning set.
    let p_resid: Vec<f64> = p_raw.iter().zip(&p_hat).map(|(a, b)| a - b).collect();
    let gamma_p = if fe_keys.is_empty() {
        p_resid
    } else {
        let carrier = ds.with_replaced_outcome(&p_resid);
        carrier.within_transform(&fe_keys, &["outcome"])?.column_values("outcome")?
    };

    Ok(Residuals {
        outcome_fit_correlation: stats::correlation(&y_hat, &y_transformed),
        treatment_fit_correlation: stats::correlation(&p_hat, &p_raw),
        gamma_y,
        gamma_p,
        fold: plan.fold.clone(),
        y_transformed,
        selected_lambda: lambda,
    })
}
