//! Honest subsampled tree ensembles: a regression forest for nuisance and
//! propensity prediction, and a causal forest estimating per-unit effects of
//! a continuous treatment from residualized outcomes.
//!
//! Trees are grown on subsamples drawn inside shared half-samples (groups of
//! two trees per half-sample); the grouped structure drives the variance
//! estimator for per-unit effects. Each tree is honest: the rows used to
//! choose splits are disjoint from the rows stored in leaves for estimation.

mod grow;
mod tune;

pub use tune::{tune, TuneGrid};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

/// Reported effects are per this many dollars of treatment.
pub const EFFECT_SCALE_DOLLARS: f64 = 10.0;

/// Trees per shared half-sample group.
const TREES_PER_GROUP: usize = 2;

/// Serialization format version for [`ForestModel`].
const FORMAT_VERSION: u32 = 1;

/// Ensemble configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    /// Fraction of all rows used by each tree, drawn within a half-sample.
    pub subsample_fraction: f64,
    /// Fraction of each tree's subsample used for split selection; the rest
    /// populates leaves.
    pub honesty_fraction: f64,
    pub min_leaf_size: usize,
    /// Number of candidate split covariates per node.
    pub mtry: usize,
    /// Penalty applied to causal splits with unequal child sizes, scaled by
    /// |n_left - n_right| / n.
    pub imbalance_penalty: f64,
    pub min_treated_per_leaf: usize,
    pub min_control_per_leaf: usize,
    pub master_seed: u64,
}

impl ForestConfig {
    /// Desk-scale defaults for a given covariate count.
    pub fn default_for(n_features: usize) -> ForestConfig {
        let mtry = ((n_features as f64).sqrt().ceil() as usize + 1).clamp(1, n_features.max(1));
        ForestConfig {
            num_trees: 2000,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            min_leaf_size: 5,
            mtry,
            imbalance_penalty: 0.0,
            min_treated_per_leaf: 1,
            min_control_per_leaf: 1,
            master_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> ForestConfig {
        self.master_seed = seed;
        self
    }

    pub fn with_trees(mut self, num_trees: usize) -> ForestConfig {
        self.num_trees = num_trees;
        self
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.num_trees < 1 {
            return Err(Error::InvalidConfig("num_trees must be >= 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidConfig("subsample_fraction must be in (0, 1]".into()));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(Error::InvalidConfig("honesty_fraction must be in (0, 1)".into()));
        }
        if self.min_leaf_size < 1 {
            return Err(Error::InvalidConfig("min_leaf_size must be >= 1".into()));
        }
        if self.mtry < 1 || self.mtry > n_features {
            return Err(Error::InvalidConfig(format!(
                "mtry must be in [1, {}], got {}",
                n_features, self.mtry
            )));
        }
        if self.imbalance_penalty < 0.0 {
            return Err(Error::InvalidConfig("imbalance_penalty must be >= 0".into()));
        }
        if self.min_treated_per_leaf < 1 || self.min_control_per_leaf < 1 {
            return Err(Error::InvalidConfig("per-leaf group minima must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestKind {
    Regression,
    Causal,
}

/// One node of a fitted tree. Leaves store estimate-half row indices plus a
/// cached per-leaf value (mean response for regression trees, leaf-level
/// effect ratio for causal trees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64, rows: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Split-half row indices (sorted).
    pub split_rows: Vec<u32>,
    /// Estimate-half row indices (sorted).
    pub est_rows: Vec<u32>,
}

impl Tree {
    /// Index of the leaf a covariate row falls into.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { .. } => return idx,
            }
        }
    }

    pub fn leaf_of(&self, row: &[f64]) -> (&[u32], f64) {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, rows } => (rows, *value),
            Node::Split { .. } => unreachable!("leaf_index returned a split node"),
        }
    }

    /// True when the row index took part in this tree (either half).
    pub fn in_subsample(&self, row: u32) -> bool {
        self.split_rows.binary_search(&row).is_ok() || self.est_rows.binary_search(&row).is_ok()
    }
}

/// A fitted ensemble plus the fingerprint of its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub kind: ForestKind,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
    pub n_rows: usize,
    pub n_features: usize,
    pub schema_hash: u64,
    pub trees_per_group: usize,
}

/// Per-unit conditional effect with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapeRow {
    pub unit_id: String,
    pub year: i32,
    /// Effect per 10 dollars of treatment.
    pub tau_hat: f64,
    pub se: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Collection of per-unit effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapeSet {
    pub rows: Vec<CapeRow>,
}

impl CapeSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn tau_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.tau_hat).collect()
    }

    pub fn mean_tau(&self) -> f64 {
        stats::mean(&self.tau_values())
    }

    /// CSV export: unit_id, year, tau_hat, se, p_value, significant.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("unit_id,year,tau_hat,se,p_value,significant\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.10},{:.10},{:.10},{}\n",
                r.unit_id, r.year, r.tau_hat, r.se, r.p_value, r.significant
            ));
        }
        out
    }

    /// Row labels "0".."n-1" with year 0, for callers working on bare
    /// matrices.
    pub fn index_labels(n: usize) -> Vec<(String, i32)> {
        (0..n).map(|i| (i.to_string(), 0)).collect()
    }
}

/// Fits an honest regression forest minimizing the squared-error split
/// criterion on the split half; leaves hold estimate-half means.
pub fn fit_regression_forest(x: &Matrix, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    cfg.validate(x.ncols())?;
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "fit_regression_forest: X has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    let needed = 2 * cfg.min_leaf_size;
    if x.nrows() < needed {
        return Err(Error::TooFewRows { needed, got: x.nrows() });
    }
    check_covariate_variation(x)?;
    Ok(grow::grow_forest(&grow::GrowTask::Regression { x, y }, cfg))
}

/// Fits an honest causal forest on residualized data. Split selection
/// maximizes the size-weighted squared difference of child-level effect
/// ratios over split-half rows, minus the configured imbalance penalty.
pub fn fit_causal_forest(
    x: &Matrix,
    y: &[f64],
    p: &[f64],
    y_hat: &[f64],
    p_hat: &[f64],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    cfg.validate(x.ncols())?;
    let n = x.nrows();
    if [y.len(), p.len(), y_hat.len(), p_hat.len()].iter().any(|&l| l != n) {
        return Err(Error::InvalidInput(
            "fit_causal_forest: input vectors must match row count".into(),
        ));
    }
    // An oversized min_leaf_size degrades to root-only trees (a constant
    // fit) rather than erroring, which grid tuning relies on.
    if n < 4 {
        return Err(Error::TooFewRows { needed: 4, got: n });
    }
    check_covariate_variation(x)?;

    let gamma_y: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    let gamma_p: Vec<f64> = p.iter().zip(p_hat).map(|(a, b)| a - b).collect();
    let spread = gamma_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - gamma_p.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = gamma_p.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
    if !(spread > 1e-12 * scale.max(1.0)) {
        return Err(Error::InsufficientTreatmentVariation);
    }
    let treated: Vec<bool> = p.iter().map(|&v| v > 0.0).collect();

    Ok(grow::grow_forest(
        &grow::GrowTask::Causal { x, gamma_y: &gamma_y, gamma_p: &gamma_p, treated: &treated },
        cfg,
    ))
}

fn check_covariate_variation(x: &Matrix) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::DegenerateCovariates);
    }
    let first = x.row(0);
    for i in 1..x.nrows() {
        if x.row(i) != first {
            return Ok(());
        }
    }
    Err(Error::DegenerateCovariates)
}

/// Average over trees of the leaf estimate for each target row.
pub fn predict_regression(model: &ForestModel, x_new: &Matrix) -> Result<Vec<f64>> {
    if model.kind != ForestKind::Regression {
        return Err(Error::InvalidInput("predict_regression needs a regression forest".into()));
    }
    if x_new.ncols() != model.n_features {
        return Err(Error::SchemaMismatch(format!(
            "model trained on {} features, got {}",
            model.n_features,
            x_new.ncols()
        )));
    }
    use rayon::prelude::*;
    (0..x_new.nrows())
        .into_par_iter()
        .map(|i| {
            let row = x_new.row(i);
            let mut sum = 0.0;
            let mut count = 0usize;
            for tree in &model.trees {
                let (rows, value) = tree.leaf_of(row);
                if !rows.is_empty() && value.is_finite() {
                    sum += value;
                    count += 1;
                }
            }
            if count == 0 {
                Err(Error::ZeroWeightTarget(i))
            } else {
                Ok(sum / count as f64)
            }
        })
        .collect()
}

/// Forest-weight estimate of the per-unit effect for each target row, with a
/// grouped half-sample standard error. Training-side vectors must match the
/// data the model was fitted on.
#[allow(clippy::too_many_arguments)]
pub fn predict_cape(
    model: &ForestModel,
    x_new: &Matrix,
    labels: &[(String, i32)],
    y: &[f64],
    p: &[f64],
    y_hat: &[f64],
    p_hat: &[f64],
) -> Result<CapeSet> {
    if model.kind != ForestKind::Causal {
        return Err(Error::InvalidInput("predict_cape needs a causal forest".into()));
    }
    if x_new.ncols() != model.n_features {
        return Err(Error::SchemaMismatch(format!(
            "model trained on {} features, got {}",
            model.n_features,
            x_new.ncols()
        )));
    }
    let n_train = model.n_rows;
    if [y.len(), p.len(), y_hat.len(), p_hat.len()].iter().any(|&l| l != n_train) {
        return Err(Error::SchemaMismatch(format!(
            "training vectors must have {} rows",
            n_train
        )));
    }
    if labels.len() != x_new.nrows() {
        return Err(Error::InvalidInput("labels must match target rows".into()));
    }

    let gamma_y: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    let gamma_p: Vec<f64> = p.iter().zip(p_hat).map(|(a, b)| a - b).collect();

    use rayon::prelude::*;
    let rows: Result<Vec<CapeRow>> = (0..x_new.nrows())
        .into_par_iter()
        .map(|i| {
            let est = estimate_target(model, x_new.row(i), &gamma_y, &gamma_p)
                .ok_or(Error::ZeroWeightTarget(i))?;
            let (unit_id, year) = labels[i].clone();
            let tau_hat = est.tau * EFFECT_SCALE_DOLLARS;
            let se = (est.variance.max(1e-24)).sqrt() * EFFECT_SCALE_DOLLARS;
            let p_value = stats::normal_two_sided_p(tau_hat / se);
            Ok(CapeRow { unit_id, year, tau_hat, se, p_value, significant: p_value < 0.05 })
        })
        .collect();
    Ok(CapeSet { rows: rows? })
}

struct TargetEstimate {
    tau: f64,
    variance: f64,
}

/// Weighted effect ratio and grouped-tree variance for one target.
fn estimate_target(
    model: &ForestModel,
    row: &[f64],
    gamma_y: &[f64],
    gamma_p: &[f64],
) -> Option<TargetEstimate> {
    let mut weights: Vec<f64> = vec![0.0; model.n_rows];
    let mut total_weight = 0.0;
    // Per-tree leaf values for the grouped variance estimator.
    let mut tree_values: Vec<f64> = Vec::with_capacity(model.trees.len());
    for tree in &model.trees {
        let (rows, value) = tree.leaf_of(row);
        if rows.is_empty() {
            tree_values.push(f64::NAN);
            continue;
        }
        let w = 1.0 / rows.len() as f64;
        for &r in rows {
            weights[r as usize] += w;
        }
        total_weight += 1.0;
        tree_values.push(value);
    }
    if total_weight == 0.0 {
        return None;
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            let wn = w / total_weight;
            num += wn * gamma_y[i] * gamma_p[i];
            den += wn * gamma_p[i] * gamma_p[i];
        }
    }
    let tau = if den > 0.0 { num / den } else { 0.0 };

    Some(TargetEstimate { tau, variance: grouped_variance(model, &tree_values) })
}

/// Half-sample grouped variance: between-group variance of group-mean leaf
/// values, debiased by the within-group Monte Carlo variance. Falls back to
/// the raw between-group variance when the debiased value is not positive.
fn grouped_variance(model: &ForestModel, tree_values: &[f64]) -> f64 {
    let ell = model.trees_per_group.max(1);
    let mut group_means: Vec<f64> = Vec::new();
    let mut within_var_sum = 0.0;
    let mut within_groups = 0usize;
    let mut g = 0;
    while g < tree_values.len() {
        let end = (g + ell).min(tree_values.len());
        let vals: Vec<f64> = tree_values[g..end].iter().cloned().filter(|v| v.is_finite()).collect();
        if !vals.is_empty() {
            let m = stats::mean(&vals);
            group_means.push(m);
            if vals.len() >= 2 {
                within_var_sum += stats::sample_variance(&vals);
                within_groups += 1;
            }
        }
        g = end;
    }
    if group_means.len() < 2 {
        return 0.0;
    }
    let between = stats::sample_variance(&group_means);
    if within_groups == 0 {
        return between;
    }
    let within = within_var_sum / within_groups as f64;
    let debiased = between - within / ell as f64;
    if debiased > 0.0 {
        debiased
    } else {
        between
    }
}

/// Depth-weighted share of splits per covariate: weight (1/2)^depth for
/// depths 1 through 4, normalized to sum to one.
pub fn split_frequency_importance(model: &ForestModel) -> Result<Vec<f64>> {
    let mut scores = vec![0.0_f64; model.n_features];
    for tree in &model.trees {
        // (node index, depth of the split it would represent)
        let mut stack: Vec<(usize, u32)> = vec![(0, 1)];
        while let Some((idx, depth)) = stack.pop() {
            if let Node::Split { feature, left, right, .. } = &tree.nodes[idx] {
                if depth <= 4 {
                    scores[*feature as usize] += 0.5_f64.powi(depth as i32);
                    stack.push((*left as usize, depth + 1));
                    stack.push((*right as usize, depth + 1));
                }
            }
        }
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoSplits);
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    Ok(scores)
}

/// Covariates ranked by importance, descending; ties resolved by index.
pub fn importance_ranking(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| {
        importance[b].partial_cmp(&importance[a]).unwrap().then(a.cmp(&b))
    });
    order
}

/// Raw (unnormalized over trees) forest weights for one target row; used by
/// tests to check the weight invariants.
pub fn forest_weights(model: &ForestModel, row: &[f64]) -> Vec<f64> {
    let mut weights: Vec<f64> = vec![0.0; model.n_rows];
    let mut total = 0.0;
    for tree in &model.trees {
        let (rows, _) = tree.leaf_of(row);
        if rows.is_empty() {
            continue;
        }
        let w = 1.0 / rows.len() as f64;
        for &r in rows {
            weights[r as usize] += w;
        }
        total += 1.0;
    }
    if total > 0.0 {
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
    weights
}

#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    version: u32,
    model: ForestModel,
}

impl ForestModel {
    /// Serializes to versioned JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelEnvelope { version: FORMAT_VERSION, model: self.clone() })
            .expect("forest serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<ForestModel> {
        let env: ModelEnvelope = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("forest deserialization: {}", e)))?;
        if env.version != FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "forest format version {} (expected {})",
                env.version, FORMAT_VERSION
            )));
        }
        Ok(env.model)
    }

    /// True when every tree's split and estimate index sets are disjoint.
    pub fn honesty_holds(&self) -> bool {
        self.trees.iter().all(|t| {
            t.split_rows.iter().all(|r| t.est_rows.binary_search(r).is_err())
        })
    }
}
