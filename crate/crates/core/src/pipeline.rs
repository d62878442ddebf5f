//! End-to-end estimation flows tying the modules together: propensity
//! estimation and trimming, cross-fit residualization, the average-effect
//! table, per-unit effects with heterogeneity reports, and policy scenarios.

use serde::{Deserialize, Serialize};

use crate::ate::{self, AteEstimate, AteMethod, OsterInputs};
use crate::error::{Error, Result};
use crate::forest::{self, CapeSet, ForestConfig, ForestModel};
use crate::hte;
use crate::matrix::Matrix;
use crate::nuisance::{self, CrossFitPlan, OutcomeLearnerSpec, Residuals, TreatmentLearnerSpec};
use crate::overlap::{OverlapReport, TrimRule};
use crate::panel::{CovariateKind, PanelDataset};
use crate::policy::{self, AggregationKey, CostParams, CostSample, ForestTrainingRefs, PolicyReport};
use crate::stats;

/// Knobs for the estimation pipelines. Defaults match the desk-scale
/// configuration used by the acceptance suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub fe_keys: Vec<String>,
    pub cluster_key: String,
    pub k_folds: usize,
    /// Fixed lasso penalty; cross-validated when absent.
    pub lasso_lambda: Option<f64>,
    pub lambda_grid_points: usize,
    pub nuisance_trees: usize,
    pub aipw_trees: usize,
    pub causal_trees: usize,
    pub min_leaf_size: usize,
    pub mtry: Option<usize>,
    pub imbalance_penalty: f64,
    pub use_lagged_treatment: bool,
    pub trim: TrimRule,
    pub trim_enabled: bool,
    pub oster_delta: f64,
    pub oster_r2_max_factor: f64,
    /// Mean counterfactual outcome for the percent row; mean untreated
    /// outcome when absent.
    pub counterfactual_mean: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            fe_keys: vec!["unit".into(), "year".into(), "region".into()],
            cluster_key: "unit".into(),
            k_folds: 5,
            lasso_lambda: None,
            lambda_grid_points: 50,
            nuisance_trees: 400,
            aipw_trees: 300,
            causal_trees: 2000,
            min_leaf_size: 5,
            mtry: None,
            imbalance_penalty: 0.0,
            use_lagged_treatment: false,
            trim: TrimRule::default(),
            trim_enabled: true,
            oster_delta: 0.5,
            oster_r2_max_factor: 1.3,
            counterfactual_mean: None,
        }
    }
}

impl PipelineConfig {
    pub fn forest_config(&self, n_features: usize, trees: usize, seed: u64) -> ForestConfig {
        let mut cfg = ForestConfig::default_for(n_features);
        cfg.num_trees = trees;
        cfg.min_leaf_size = self.min_leaf_size;
        if let Some(m) = self.mtry {
            cfg.mtry = m.clamp(1, n_features);
        }
        cfg.imbalance_penalty = self.imbalance_penalty;
        cfg.master_seed = seed;
        cfg
    }

    fn fe_key_refs(&self) -> Vec<&str> {
        self.fe_keys.iter().map(|s| s.as_str()).collect()
    }
}

/// Cross-fitted probability of receiving any payment, used for overlap
/// diagnostics, trimming, AIPW, and ban-payment imputation.
pub fn binary_propensity_scores(
    ds: &PanelDataset,
    plan: &CrossFitPlan,
    cfg: &PipelineConfig,
) -> Result<Vec<f64>> {
    let x = treatment_feature_matrix(ds, cfg.use_lagged_treatment);
    let flags: Vec<f64> = ds.rows().iter().map(|o| f64::from(o.treatment > 0.0)).collect();
    let mut scores = vec![0.0; ds.len()];
    for fold in 0..plan.k {
        let train = plan.rows_out_of_fold(fold);
        let test = plan.rows_in_fold(fold);
        let x_train = x.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| flags[i]).collect();
        let fcfg = cfg.forest_config(
            x.ncols(),
            cfg.nuisance_trees,
            stats::derive_seed(cfg.seed, 1000 + fold as u64),
        );
        let model = forest::fit_regression_forest(&x_train, &y_train, &fcfg)?;
        let preds = forest::predict_regression(&model, &x.select_rows(&test))?;
        for (pos, &i) in test.iter().enumerate() {
            scores[i] = preds[pos].clamp(0.0, 1.0);
        }
    }
    Ok(scores)
}

/// A regression forest of the treated flag fitted on the full sample; the
/// score source for imputing banned-region payments.
pub fn binary_propensity_model(ds: &PanelDataset, cfg: &PipelineConfig) -> Result<ForestModel> {
    let x = treatment_feature_matrix(ds, cfg.use_lagged_treatment);
    let flags: Vec<f64> = ds.rows().iter().map(|o| f64::from(o.treatment > 0.0)).collect();
    let fcfg =
        cfg.forest_config(x.ncols(), cfg.nuisance_trees, stats::derive_seed(cfg.seed, 2000));
    let mut model = forest::fit_regression_forest(&x, &flags, &fcfg)?;
    if !cfg.use_lagged_treatment {
        model.schema_hash = ds.schema().hash();
    }
    Ok(model)
}

fn treatment_feature_matrix(ds: &PanelDataset, use_lag: bool) -> Matrix {
    let base = ds.covariate_matrix();
    if !use_lag {
        return base;
    }
    let lags = ds.lagged_treatment();
    let n = base.nrows();
    let mut data = Vec::with_capacity(n * (base.ncols() + 1));
    for i in 0..n {
        data.extend_from_slice(base.row(i));
        data.push(lags[i]);
    }
    Matrix::new(data, n, base.ncols() + 1)
}

/// Everything the average-effect table needs, produced in one pass.
#[derive(Debug, Clone)]
pub struct AteSuiteResult {
    /// Rows in Table-3 order: OLS raw, OLS controls, residualized, AIPW,
    /// CAPE mean, percent of counterfactual.
    pub estimates: Vec<AteEstimate>,
    pub oster_inputs: OsterInputs,
    pub oster_beta_star: f64,
    pub oster_delta_star: f64,
    pub residuals: Residuals,
    pub capes: CapeSet,
    pub causal_forest: ForestModel,
    pub propensity_scores: Vec<f64>,
    pub overlap: OverlapReport,
    /// Rows dropped by trimming (indices into the input dataset).
    pub trimmed_rows: Vec<usize>,
    /// The analysis dataset after trimming.
    pub analysis_ds: PanelDataset,
    pub mean_treated_payment: f64,
    pub counterfactual_mean: f64,
}

/// Runs the full average-effect suite: propensity scores, trimming, OLS
/// with and without controls, cross-fit residualized regression, AIPW, the
/// causal-forest mean effect, the stability bound, and the percent of the
/// counterfactual outcome.
pub fn run_ate_suite(ds: &PanelDataset, cfg: &PipelineConfig) -> Result<AteSuiteResult> {
    let treated_all = ds.treated_flags();
    let plan_full = CrossFitPlan::stratified(&treated_all, cfg.k_folds, cfg.seed)?;
    let scores_full = binary_propensity_scores(ds, &plan_full, cfg)?;

    // Overlap diagnostics on the untrimmed scores, then trim.
    let overlap = OverlapReport::compute(&scores_full, &treated_all, &cfg.trim, 0.10, 30)?;
    let (analysis_ds, trimmed_rows, scores) = if cfg.trim_enabled {
        let (kept_ds, dropped) = crate::overlap::trim(ds, &scores_full, &cfg.trim)?;
        let mut dropped_mask = vec![false; ds.len()];
        for &d in &dropped {
            dropped_mask[d] = true;
        }
        let kept: Vec<f64> = scores_full
            .iter()
            .zip(&dropped_mask)
            .filter(|(_, dropped)| !**dropped)
            .map(|(s, _)| *s)
            .collect();
        (kept_ds, dropped, kept)
    } else {
        (ds.clone(), Vec::new(), scores_full.clone())
    };

    let fe_keys = cfg.fe_key_refs();
    let ols_raw = ate::ols_fe(&analysis_ds, false, &fe_keys, &cfg.cluster_key)?;
    let ols_ctrl = ate::ols_fe(&analysis_ds, true, &fe_keys, &cfg.cluster_key)?;

    // Cross-fit residualization on the trimmed sample.
    let treated = analysis_ds.treated_flags();
    let plan = CrossFitPlan::stratified(&treated, cfg.k_folds, stats::derive_seed(cfg.seed, 1))?;
    let outcome_spec = OutcomeLearnerSpec {
        lambda: cfg.lasso_lambda,
        grid_points: cfg.lambda_grid_points,
        fe_keys: cfg.fe_keys.clone(),
    };
    let n_features = analysis_ds.schema().len() + usize::from(cfg.use_lagged_treatment);
    let treatment_spec = TreatmentLearnerSpec {
        forest: cfg.forest_config(
            n_features,
            cfg.nuisance_trees,
            stats::derive_seed(cfg.seed, 2),
        ),
        use_lagged_treatment: cfg.use_lagged_treatment,
    };
    let residuals = nuisance::residualize(&analysis_ds, &plan, &outcome_spec, &treatment_spec)?;
    let residualized = ate::residualized_ate(&residuals, &analysis_ds, &cfg.cluster_key)?;

    // Causal forest on the residualized data.
    let x = analysis_ds.covariate_matrix();
    let y_eff = residuals.y_transformed.clone();
    let y_hat_eff: Vec<f64> =
        y_eff.iter().zip(&residuals.gamma_y).map(|(y, g)| y - g).collect();
    let p_raw = analysis_ds.column_values("treatment")?;
    let p_hat_eff: Vec<f64> =
        p_raw.iter().zip(&residuals.gamma_p).map(|(p, g)| p - g).collect();
    let causal_cfg = cfg.forest_config(
        x.ncols(),
        cfg.causal_trees,
        stats::derive_seed(cfg.seed, 3),
    );
    let mut causal_forest =
        forest::fit_causal_forest(&x, &y_eff, &p_raw, &y_hat_eff, &p_hat_eff, &causal_cfg)?;
    causal_forest.schema_hash = analysis_ds.schema().hash();
    let labels: Vec<(String, i32)> =
        analysis_ds.rows().iter().map(|o| (o.unit_id.clone(), o.year)).collect();
    let capes = forest::predict_cape(
        &causal_forest,
        &x,
        &labels,
        &y_eff,
        &p_raw,
        &y_hat_eff,
        &p_hat_eff,
    )?;

    // The mean of the adaptive-weight residual regressions shares the plain
    // residual regression's first-order variance; reuse its standard error.
    let n_treated = treated.iter().filter(|&&t| t).count();
    let cape_mean = AteEstimate {
        method: AteMethod::CapeMean,
        alpha_hat: capes.mean_tau(),
        se: residualized.se,
        n_treated,
        n_control: analysis_ds.len() - n_treated,
        r_squared: None,
        notes: vec![],
    };

    let aipw = run_aipw(&analysis_ds, &plan, &scores, cfg)?;

    let oster_inputs = OsterInputs {
        beta_short: ols_raw.alpha_hat,
        r2_short: ols_raw.r_squared.unwrap_or(0.0),
        beta_ctrl: ols_ctrl.alpha_hat,
        r2_ctrl: ols_ctrl.r_squared.unwrap_or(0.0),
        delta: cfg.oster_delta,
        r2_max: (cfg.oster_r2_max_factor * ols_ctrl.r_squared.unwrap_or(0.0)).min(1.0),
    };
    let oster_beta_star = ate::oster_bound(&oster_inputs)?;
    let oster_delta_star = ate::oster_delta_to_zero(&oster_inputs)?;

    let treated_payments: Vec<f64> =
        p_raw.iter().cloned().filter(|&p| p > 0.0).collect();
    let mean_treated_payment = stats::mean(&treated_payments);
    let counterfactual_mean = match cfg.counterfactual_mean {
        Some(v) => v,
        None => {
            let control_outcomes: Vec<f64> = analysis_ds
                .rows()
                .iter()
                .filter(|o| o.treatment <= 0.0)
                .map(|o| o.outcome)
                .collect();
            stats::mean(&control_outcomes)
        }
    };
    let pct =
        ate::pct_of_counterfactual(&residualized, mean_treated_payment, counterfactual_mean)?;

    Ok(AteSuiteResult {
        estimates: vec![ols_raw, ols_ctrl, residualized, aipw, cape_mean, pct],
        oster_inputs,
        oster_beta_star,
        oster_delta_star,
        residuals,
        capes,
        causal_forest,
        propensity_scores: scores,
        overlap,
        trimmed_rows,
        analysis_ds,
        mean_treated_payment,
        counterfactual_mean,
    })
}

/// Cross-fit AIPW with per-arm outcome forests and the binary propensity
/// scores.
fn run_aipw(
    ds: &PanelDataset,
    plan: &CrossFitPlan,
    scores: &[f64],
    cfg: &PipelineConfig,
) -> Result<AteEstimate> {
    let x = ds.covariate_matrix();
    let y = ds.column_values("outcome")?;
    let treated = ds.treated_flags();
    let n = ds.len();

    let mut mu1 = vec![0.0; n];
    let mut mu0 = vec![0.0; n];
    for fold in 0..plan.k {
        let train = plan.rows_out_of_fold(fold);
        let test = plan.rows_in_fold(fold);
        let x_test = x.select_rows(&test);
        for (arm, out) in [(true, &mut mu1), (false, &mut mu0)] {
            let arm_rows: Vec<usize> =
                train.iter().cloned().filter(|&i| treated[i] == arm).collect();
            let x_arm = x.select_rows(&arm_rows);
            let y_arm: Vec<f64> = arm_rows.iter().map(|&i| y[i]).collect();
            let fcfg = cfg.forest_config(
                x.ncols(),
                cfg.aipw_trees,
                stats::derive_seed(cfg.seed, 3000 + 2 * fold as u64 + u64::from(arm)),
            );
            let model = forest::fit_regression_forest(&x_arm, &y_arm, &fcfg)?;
            let preds = forest::predict_regression(&model, &x_test)?;
            for (pos, &i) in test.iter().enumerate() {
                out[i] = preds[pos];
            }
        }
    }

    let clusters = ds.cluster_labels(&cfg.cluster_key)?;
    let treated_payments: Vec<f64> = ds
        .rows()
        .iter()
        .filter(|o| o.treatment > 0.0)
        .map(|o| o.treatment)
        .collect();
    ate::aipw_ate(
        &y,
        &treated,
        scores,
        &mu1,
        &mu0,
        &clusters,
        stats::mean(&treated_payments),
    )
}

/// Heterogeneity bundle built from a fitted CAPE set.
#[derive(Debug, Clone)]
pub struct CateAnalysis {
    pub significance: hte::SignificanceShare,
    pub importance: Vec<(String, f64)>,
    pub characteristics: Vec<hte::GroupComparison>,
    pub subgroups: Vec<hte::SubgroupCape>,
    pub histogram: hte::CapeHistogram,
}

/// Runs the post-estimation heterogeneity analysis: significance shares,
/// split-frequency importance, high-vs-low characteristics, and per-variable
/// subgroup contrasts (binary covariates split at 0/1, continuous ones at
/// their quartiles).
pub fn run_cate_analysis(
    capes: &CapeSet,
    causal_forest: &ForestModel,
    ds: &PanelDataset,
) -> Result<CateAnalysis> {
    let treatments = ds.column_values("treatment")?;
    let significance = hte::significance_share(capes, &treatments)?;

    let raw_importance = forest::split_frequency_importance(causal_forest)?;
    let names = ds.schema().names();
    let order = forest::importance_ranking(&raw_importance);
    let importance: Vec<(String, f64)> = order
        .iter()
        .map(|&j| (names[j].to_string(), raw_importance[j]))
        .collect();

    let variables: Vec<&str> = names.clone();
    let characteristics = hte::group_characteristics(capes, ds, &variables)?;

    let mut subgroups = Vec::new();
    for (name, kind) in &ds.schema().columns {
        let spec = match kind {
            CovariateKind::Binary => hte::GroupSpec::Binary { column: name.clone() },
            CovariateKind::Continuous => hte::GroupSpec::Quartiles { column: name.clone() },
        };
        match hte::subgroup_cape(capes, ds, &spec) {
            Ok(s) => subgroups.push(s),
            // A covariate can be constant in a subsample; skip it.
            Err(Error::EmptyGroup(_)) | Err(Error::DegenerateQuartiles) => continue,
            Err(e) => return Err(e),
        }
    }

    let histogram = hte::cape_histogram(capes, 0.05)?;
    Ok(CateAnalysis { significance, importance, characteristics, subgroups, histogram })
}

/// Policy scenario outputs: observed-payment costs for the reference region
/// and, when a banned region is designated, the ban counterfactual.
#[derive(Debug, Clone)]
pub struct PolicyAnalysis {
    pub unit_cost: f64,
    pub cost_report: PolicyReport,
    pub ban_report: Option<PolicyReport>,
    pub imputed_payments: Option<Vec<f64>>,
}

/// Runs cost-of-payments on the reference rows and, if `banned_state` is
/// set, the gift-ban counterfactual for that state's rows using models
/// fitted on the reference region.
#[allow(clippy::too_many_arguments)]
pub fn run_policy(
    ds: &PanelDataset,
    cfg: &PipelineConfig,
    banned_state: Option<&str>,
    unit_cost_override: Option<f64>,
    cost_sample: CostSample,
    significant_only: bool,
    agg_key: AggregationKey,
    treated_donors_only: bool,
) -> Result<PolicyAnalysis> {
    let (reference, banned) = match banned_state {
        Some(state) => {
            let ref_idx: Vec<usize> = (0..ds.len())
                .filter(|&i| ds.rows()[i].state != state)
                .collect();
            let ban_idx: Vec<usize> = (0..ds.len())
                .filter(|&i| ds.rows()[i].state == state)
                .collect();
            if ban_idx.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "banned state '{}' has no rows",
                    state
                )));
            }
            if ref_idx.is_empty() {
                return Err(Error::EmptyReference);
            }
            (ds.subset(&ref_idx), Some(ds.subset(&ban_idx)))
        }
        None => (ds.clone(), None),
    };

    let suite = run_ate_suite(&reference, cfg)?;
    let c = match unit_cost_override {
        Some(v) => v,
        None => policy::unit_cost(&suite.analysis_ds, cost_sample)?,
    };
    let params = CostParams::new(c)?;
    let cost_report = policy::cost_of_payments(
        &suite.capes,
        &suite.analysis_ds,
        &params,
        significant_only,
        agg_key,
    )?;

    let (ban_report, imputed_payments) = match banned {
        Some(banned_ds) => {
            let propensity = binary_propensity_model(&suite.analysis_ds, cfg)?;
            let imputed = policy::impute_ban_payments(
                &banned_ds,
                &suite.analysis_ds,
                &propensity,
                treated_donors_only,
            )?;
            let y_eff = suite.residuals.y_transformed.clone();
            let y_hat_eff: Vec<f64> =
                y_eff.iter().zip(&suite.residuals.gamma_y).map(|(y, g)| y - g).collect();
            let p_raw = suite.analysis_ds.column_values("treatment")?;
            let p_hat_eff: Vec<f64> =
                p_raw.iter().zip(&suite.residuals.gamma_p).map(|(p, g)| p - g).collect();
            let training = ForestTrainingRefs {
                y: &y_eff,
                p: &p_raw,
                y_hat: &y_hat_eff,
                p_hat: &p_hat_eff,
            };
            let report = policy::ban_savings(
                &banned_ds,
                &imputed,
                &suite.causal_forest,
                &training,
                &params,
                significant_only,
                agg_key,
            )?;
            (Some(report), Some(imputed))
        }
        None => (None, None),
    };

    Ok(PolicyAnalysis { unit_cost: c, cost_report, ban_report, imputed_payments })
}
