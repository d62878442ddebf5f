//! Grid tuning of causal-forest hyperparameters by out-of-bag R-loss.

use super::{fit_causal_forest, ForestConfig, ForestModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Candidate values for the cross-validated parameters. Each axis must be
/// non-empty; the grid is their cartesian product.
#[derive(Debug, Clone)]
pub struct TuneGrid {
    pub min_leaf_sizes: Vec<usize>,
    pub mtrys: Vec<usize>,
    pub imbalance_penalties: Vec<f64>,
}

impl TuneGrid {
    pub fn single(min_leaf_size: usize, mtry: usize, imbalance_penalty: f64) -> TuneGrid {
        TuneGrid {
            min_leaf_sizes: vec![min_leaf_size],
            mtrys: vec![mtry],
            imbalance_penalties: vec![imbalance_penalty],
        }
    }
}

/// Selects (min_leaf_size, mtry, imbalance_penalty) minimizing the
/// out-of-bag R-loss sum of (gamma_y - tau_oob * gamma_p)^2. Grid points are
/// visited in ascending lexicographic order and only strictly smaller losses
/// replace the incumbent, so ties resolve to the smallest point.
pub fn tune(
    x: &Matrix,
    y: &[f64],
    p: &[f64],
    y_hat: &[f64],
    p_hat: &[f64],
    grid: &TuneGrid,
    base: &ForestConfig,
) -> Result<ForestConfig> {
    if grid.min_leaf_sizes.is_empty()
        || grid.mtrys.is_empty()
        || grid.imbalance_penalties.is_empty()
    {
        return Err(Error::InvalidConfig("tune: empty grid axis".into()));
    }
    let mut leaf_sizes = grid.min_leaf_sizes.clone();
    leaf_sizes.sort_unstable();
    let mut mtrys = grid.mtrys.clone();
    mtrys.sort_unstable();
    let mut penalties = grid.imbalance_penalties.clone();
    penalties.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let gamma_y: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    let gamma_p: Vec<f64> = p.iter().zip(p_hat).map(|(a, b)| a - b).collect();

    let mut best: Option<(f64, ForestConfig)> = None;
    for &leaf in &leaf_sizes {
        for &mtry in &mtrys {
            for &penalty in &penalties {
                let mut cfg = base.clone();
                cfg.min_leaf_size = leaf;
                cfg.mtry = mtry;
                cfg.imbalance_penalty = penalty;
                let model = fit_causal_forest(x, y, p, y_hat, p_hat, &cfg)?;
                let loss = oob_r_loss(&model, x, &gamma_y, &gamma_p)?;
                if best.as_ref().map_or(true, |(b, _)| loss < *b) {
                    best = Some((loss, cfg));
                }
            }
        }
    }
    Ok(best.expect("grid verified non-empty").1)
}

/// Mean R-loss over rows with at least one out-of-bag tree. The per-row
/// effect estimate uses forest weights restricted to trees whose subsample
/// excludes that row.
fn oob_r_loss(
    model: &ForestModel,
    x: &Matrix,
    gamma_y: &[f64],
    gamma_p: &[f64],
) -> Result<f64> {
    use rayon::prelude::*;
    let n = x.nrows();
    let terms: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut weights: Vec<f64> = vec![0.0; n];
            let mut used = false;
            for tree in &model.trees {
                if tree.in_subsample(i as u32) {
                    continue;
                }
                let (rows, _) = tree.leaf_of(x.row(i));
                if rows.is_empty() {
                    continue;
                }
                let w = 1.0 / rows.len() as f64;
                for &r in rows {
                    weights[r as usize] += w;
                }
                used = true;
            }
            if !used {
                return None;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    num += w * gamma_y[j] * gamma_p[j];
                    den += w * gamma_p[j] * gamma_p[j];
                }
            }
            let tau = if den > 0.0 { num / den } else { 0.0 };
            let resid = gamma_y[i] - tau * gamma_p[i];
            Some(resid * resid)
        })
        .collect();

    let used: Vec<f64> = terms.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::InvalidInput(
            "oob_r_loss: no row has an out-of-bag tree; increase num_trees".into(),
        ));
    }
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}
