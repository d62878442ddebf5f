//! Average-effect estimators with cluster-robust inference, plus
//! coefficient-stability bounds for selection on unobservables.
//!
//! All effect estimates are reported per 10 dollars of treatment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::forest::EFFECT_SCALE_DOLLARS;
use crate::linalg;
use crate::nuisance::Residuals;
use crate::panel::PanelDataset;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AteMethod {
    OlsFeRaw,
    OlsFeControls,
    Residualized,
    Aipw,
    CapeMean,
    OsterBound,
    PctCounterfactual,
}

impl AteMethod {
    pub fn label(&self) -> &'static str {
        match self {
            AteMethod::OlsFeRaw => "ols_fe_raw",
            AteMethod::OlsFeControls => "ols_fe_controls",
            AteMethod::Residualized => "residualized",
            AteMethod::Aipw => "aipw",
            AteMethod::CapeMean => "cape_mean",
            AteMethod::OsterBound => "oster_bound",
            AteMethod::PctCounterfactual => "pct_counterfactual",
        }
    }
}

/// Point estimate with inference metadata. `se` is absent only for the
/// coefficient-stability bound, which has no sampling distribution here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AteEstimate {
    pub method: AteMethod,
    /// Effect per 10 dollars of treatment (or a percentage for
    /// `PctCounterfactual`).
    pub alpha_hat: f64,
    pub se: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub r_squared: Option<f64>,
    /// Diagnostics: dropped collinear controls, clipping counts.
    pub notes: Vec<String>,
}

/// Cluster-robust (CR0 sandwich) standard errors with the
/// G/(G-1) * (n-1)/(n-k) small-sample factor. Returns one SE per column of
/// `x`.
fn cluster_robust_se(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    clusters: &[String],
) -> Result<Vec<f64>> {
    let n = x.nrows();
    let k = x.ncols();
    if clusters.len() != n {
        return Err(Error::InvalidInput("cluster labels must match rows".into()));
    }
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, c) in clusters.iter().enumerate() {
        groups.entry(c.as_str()).or_default().push(i);
    }
    let g = groups.len();
    if g < 2 {
        return Err(Error::TooFewClusters { needed: 2, got: g });
    }

    let xtx = x.transpose() * x;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("X'X singular in sandwich".into()))?;

    let mut meat = DMatrix::<f64>::zeros(k, k);
    for idx in groups.values() {
        let mut score = vec![0.0_f64; k];
        for &i in idx {
            let e = residuals[i];
            for j in 0..k {
                score[j] += x[(i, j)] * e;
            }
        }
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += score[a] * score[b];
            }
        }
    }

    let correction = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    let vcov = &xtx_inv * meat * &xtx_inv * correction;
    Ok((0..k).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect())
}

/// Heteroskedasticity-robust SEs without cluster structure: every row is its
/// own cluster (HC0 with the same small-sample factor).
pub fn hc_robust_se(x: &DMatrix<f64>, residuals: &DVector<f64>) -> Result<Vec<f64>> {
    let singleton: Vec<String> = (0..x.nrows()).map(|i| i.to_string()).collect();
    cluster_robust_se(x, residuals, &singleton)
}

/// OLS of the outcome on treatment (plus optional controls) after absorbing
/// the fixed effects by iterated demeaning; SEs are clustered by
/// `cluster_key`. Collinear controls are dropped from the end of the schema,
/// with a note per dropped column.
pub fn ols_fe(
    ds: &PanelDataset,
    controls: bool,
    fe_keys: &[&str],
    cluster_key: &str,
) -> Result<AteEstimate> {
    let treated = ds.treated_flags();
    let n_treated = treated.iter().filter(|&&t| t).count();
    let n_control = ds.len() - n_treated;

    let mut columns: Vec<String> = vec!["outcome".into(), "treatment".into()];
    if controls {
        columns.extend(ds.schema().names().iter().map(|s| s.to_string()));
    }
    let column_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let transformed = if fe_keys.is_empty() {
        ds.clone()
    } else {
        ds.within_transform(fe_keys, &column_refs)?
    };

    let y = transformed.column_values("outcome")?;
    let mut regressors: Vec<(String, Vec<f64>)> =
        vec![("treatment".into(), transformed.column_values("treatment")?)];
    if controls {
        for name in ds.schema().names() {
            regressors.push((name.to_string(), transformed.column_values(name)?));
        }
    }

    // Drop collinear controls from the back until the solve succeeds.
    let mut notes = Vec::new();
    let beta = loop {
        let cols: Vec<&[f64]> = regressors.iter().map(|(_, v)| v.as_slice()).collect();
        let x = linalg::design_from_columns(&cols);
        let yv = DVector::from_column_slice(&y);
        match linalg::least_squares(&x, &yv) {
            Ok(beta) => break (x, beta),
            Err(Error::RankDeficient(_)) if regressors.len() > 1 => {
                let (name, _) = regressors.pop().expect("non-empty");
                notes.push(format!("dropped collinear control '{}'", name));
            }
            Err(e) => return Err(e),
        }
    };
    let (x, beta) = beta;

    let yv = DVector::from_column_slice(&y);
    let fitted = &x * &beta;
    let resid = &yv - &fitted;
    let rss: f64 = resid.iter().map(|e| e * e).sum();
    let my = stats::mean(&y);
    let tss: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };

    let clusters = ds.cluster_labels(cluster_key)?;
    let ses = cluster_robust_se(&x, &resid, &clusters)?;

    Ok(AteEstimate {
        method: if controls { AteMethod::OlsFeControls } else { AteMethod::OlsFeRaw },
        alpha_hat: beta[0] * EFFECT_SCALE_DOLLARS,
        se: Some(ses[0] * EFFECT_SCALE_DOLLARS),
        n_treated,
        n_control,
        r_squared: Some(r_squared),
        notes,
    })
}

/// Residual-on-residual regression: alpha = sum(gamma_p * gamma_y) /
/// sum(gamma_p^2), with a cluster-robust standard error.
pub fn residualized_ate(
    res: &Residuals,
    ds: &PanelDataset,
    cluster_key: &str,
) -> Result<AteEstimate> {
    let n = res.gamma_y.len();
    if n != ds.len() {
        return Err(Error::InvalidInput("residuals do not match dataset".into()));
    }
    let sum_pp: f64 = res.gamma_p.iter().map(|v| v * v).sum();
    if sum_pp <= 0.0 {
        return Err(Error::ZeroTreatmentVariation);
    }
    let sum_py: f64 = res.gamma_p.iter().zip(&res.gamma_y).map(|(p, y)| p * y).sum();
    let alpha = sum_py / sum_pp;

    let x = DMatrix::from_fn(n, 1, |i, _| res.gamma_p[i]);
    let resid = DVector::from_iterator(n, (0..n).map(|i| res.gamma_y[i] - alpha * res.gamma_p[i]));
    let clusters = ds.cluster_labels(cluster_key)?;
    let se = cluster_robust_se(&x, &resid, &clusters)?[0];

    let treated = ds.treated_flags();
    let n_treated = treated.iter().filter(|&&t| t).count();
    Ok(AteEstimate {
        method: AteMethod::Residualized,
        alpha_hat: alpha * EFFECT_SCALE_DOLLARS,
        se: Some(se * EFFECT_SCALE_DOLLARS),
        n_treated,
        n_control: n - n_treated,
        r_squared: None,
        notes: vec![],
    })
}

/// Doubly-robust AIPW estimate for the treated/untreated contrast, rescaled
/// to a per-10-dollar effect by the mean treated payment.
///
/// `propensity`, `mu1`, `mu0` are out-of-fold estimates (caller contract).
/// Propensities are clipped to [0.01, 0.99]; clipping is recorded in the
/// notes, not fatal.
pub fn aipw_ate(
    y: &[f64],
    treated: &[bool],
    propensity: &[f64],
    mu1: &[f64],
    mu0: &[f64],
    clusters: &[String],
    mean_treated_payment: f64,
) -> Result<AteEstimate> {
    let n = y.len();
    if [treated.len(), propensity.len(), mu1.len(), mu0.len(), clusters.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::InvalidInput("aipw_ate: shape mismatch".into()));
    }
    if mean_treated_payment <= 0.0 {
        return Err(Error::InvalidInput("aipw_ate: mean treated payment must be > 0".into()));
    }

    let mut clipped = 0usize;
    let mut psi = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = propensity[i];
        if e < 0.01 || e > 0.99 {
            clipped += 1;
            e = e.clamp(0.01, 0.99);
        }
        let t = f64::from(treated[i]);
        let value = mu1[i] - mu0[i] + t * (y[i] - mu1[i]) / e
            - (1.0 - t) * (y[i] - mu0[i]) / (1.0 - e);
        psi.push(value);
    }
    let binary_ate = stats::mean(&psi);

    // Cluster aggregation: standard error of the mean over cluster means.
    let mut by_cluster: HashMap<&str, Vec<f64>> = HashMap::new();
    for (i, c) in clusters.iter().enumerate() {
        by_cluster.entry(c.as_str()).or_default().push(psi[i]);
    }
    let g = by_cluster.len();
    if g < 2 {
        return Err(Error::TooFewClusters { needed: 2, got: g });
    }
    let cluster_means: Vec<f64> = by_cluster.values().map(|v| stats::mean(v)).collect();
    let se_binary = stats::sample_sd(&cluster_means) / (g as f64).sqrt();

    let scale = EFFECT_SCALE_DOLLARS / mean_treated_payment;
    let n_treated = treated.iter().filter(|&&t| t).count();
    let mut notes = Vec::new();
    if clipped > 0 {
        notes.push(format!("PropensityOutOfRange: clipped {} propensities to [0.01, 0.99]", clipped));
    }
    Ok(AteEstimate {
        method: AteMethod::Aipw,
        alpha_hat: binary_ate * scale,
        se: Some(se_binary * scale),
        n_treated,
        n_control: n - n_treated,
        r_squared: None,
        notes,
    })
}

/// Percent increase relative to the mean counterfactual outcome:
/// 100 * (alpha/10 * mean payment) / counterfactual mean, with a delta-method
/// standard error.
pub fn pct_of_counterfactual(
    ate: &AteEstimate,
    mean_treated_payment: f64,
    mean_counterfactual_outcome: f64,
) -> Result<AteEstimate> {
    if mean_counterfactual_outcome <= 0.0 {
        return Err(Error::ZeroCounterfactual);
    }
    let factor = 100.0 * mean_treated_payment
        / (EFFECT_SCALE_DOLLARS * mean_counterfactual_outcome);
    Ok(AteEstimate {
        method: AteMethod::PctCounterfactual,
        alpha_hat: ate.alpha_hat * factor,
        se: ate.se.map(|s| s * factor),
        n_treated: ate.n_treated,
        n_control: ate.n_control,
        r_squared: None,
        notes: vec![],
    })
}

/// Inputs for the coefficient-stability bound: a short regression
/// (beta_short, r2_short), a controlled regression (beta_ctrl, r2_ctrl), the
/// proportional-selection coefficient delta, and the ceiling r2_max.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OsterInputs {
    pub beta_short: f64,
    pub r2_short: f64,
    pub beta_ctrl: f64,
    pub r2_ctrl: f64,
    pub delta: f64,
    pub r2_max: f64,
}

impl OsterInputs {
    /// Default ceiling: 1.3 times the controlled R-squared.
    pub fn with_default_r2_max(
        beta_short: f64,
        r2_short: f64,
        beta_ctrl: f64,
        r2_ctrl: f64,
        delta: f64,
    ) -> OsterInputs {
        OsterInputs { beta_short, r2_short, beta_ctrl, r2_ctrl, delta, r2_max: 1.3 * r2_ctrl }
    }

    fn validate(&self) -> Result<()> {
        if self.r2_ctrl <= self.r2_short {
            return Err(Error::DegenerateR2);
        }
        if !(self.r2_short <= self.r2_ctrl && self.r2_ctrl <= self.r2_max && self.r2_max <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "OsterInputs: need r2_short <= r2_ctrl <= r2_max <= 1 (got {}, {}, {})",
                self.r2_short, self.r2_ctrl, self.r2_max
            )));
        }
        Ok(())
    }
}

/// Bias-adjusted coefficient under proportional selection:
/// beta* = beta_ctrl - delta * (beta_short - beta_ctrl) * (r2_max - r2_ctrl)
/// / (r2_ctrl - r2_short).
pub fn oster_bound(inputs: &OsterInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(inputs.beta_ctrl
        - inputs.delta
            * (inputs.beta_short - inputs.beta_ctrl)
            * (inputs.r2_max - inputs.r2_ctrl)
            / (inputs.r2_ctrl - inputs.r2_short))
}

/// The delta that would drive the adjusted coefficient to zero. `delta` in
/// the inputs is ignored.
pub fn oster_delta_to_zero(inputs: &OsterInputs) -> Result<f64> {
    inputs.validate()?;
    if inputs.beta_short == inputs.beta_ctrl {
        return Err(Error::InvalidInput(
            "oster_delta_to_zero: short and controlled coefficients are equal".into(),
        ));
    }
    let movement = (inputs.beta_short - inputs.beta_ctrl) * (inputs.r2_max - inputs.r2_ctrl)
        / (inputs.r2_ctrl - inputs.r2_short);
    Ok(inputs.beta_ctrl / movement)
}

impl AteEstimate {
    /// Oster-bound row for a report: no standard error by construction.
    pub fn oster_row(beta_star: f64, n_treated: usize, n_control: usize) -> AteEstimate {
        AteEstimate {
            method: AteMethod::OsterBound,
            alpha_hat: beta_star,
            se: None,
            n_treated,
            n_control,
            r_squared: None,
            notes: vec![],
        }
    }
}
