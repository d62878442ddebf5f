//! Propensity overlap diagnostics: percentile trimming, the normalized
//! difference in means, coverage frequencies, close-comparison shares, and
//! the common-support histogram.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::stats;

/// Percentile trimming rule; percentiles are type-7 (linear interpolation)
/// on the pooled score distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrimRule {
    pub lower_pct: f64,
    pub upper_pct: f64,
}

impl Default for TrimRule {
    fn default() -> Self {
        TrimRule { lower_pct: 2.5, upper_pct: 97.5 }
    }
}

impl TrimRule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower_pct && self.lower_pct < self.upper_pct && self.upper_pct <= 100.0) {
            return Err(Error::InvalidConfig(format!(
                "TrimRule: need 0 <= lower < upper <= 100, got [{}, {}]",
                self.lower_pct, self.upper_pct
            )));
        }
        Ok(())
    }
}

/// Retains rows whose score lies within the pooled [lower, upper] percentile
/// band, boundaries included. Returns the retained dataset and the dropped
/// row indices.
pub fn trim(
    ds: &PanelDataset,
    scores: &[f64],
    rule: &TrimRule,
) -> Result<(PanelDataset, Vec<usize>)> {
    rule.validate()?;
    if scores.len() != ds.len() {
        return Err(Error::InvalidInput("trim: scores must align with rows".into()));
    }
    if ds.is_empty() {
        return Err(Error::EmptyAfterTrim);
    }
    let lo = stats::quantile(scores, rule.lower_pct / 100.0);
    let hi = stats::quantile(scores, rule.upper_pct / 100.0);
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if s >= lo && s <= hi {
            keep.push(i);
        } else {
            dropped.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyAfterTrim);
    }
    Ok((ds.subset(&keep), dropped))
}

/// Standardized difference in means: (mean_t - mean_c) / sqrt((s_t^2 +
/// s_c^2) / 2) with sample standard deviations.
pub fn normalized_difference(x_treated: &[f64], x_control: &[f64]) -> Result<f64> {
    if x_treated.is_empty() || x_control.is_empty() {
        return Err(Error::InvalidInput("normalized_difference: empty group".into()));
    }
    let vt = stats::sample_variance(x_treated);
    let vc = stats::sample_variance(x_control);
    if vt <= 0.0 && vc <= 0.0 {
        // Identical constants are a genuine zero difference; different
        // constants have no scale to compare on.
        if stats::mean(x_treated) == stats::mean(x_control) {
            return Ok(0.0);
        }
        return Err(Error::ZeroVariance("normalized_difference".into()));
    }
    Ok((stats::mean(x_treated) - stats::mean(x_control)) / ((vt + vc) / 2.0).sqrt())
}

/// Share of each group whose score lies within the [lower, upper] percentile
/// band of the *other* group's score distribution. Returns
/// (coverage_treated, coverage_control).
pub fn coverage_frequencies(
    scores: &[f64],
    treated: &[bool],
    rule: &TrimRule,
) -> Result<(f64, f64)> {
    rule.validate()?;
    if scores.len() != treated.len() {
        return Err(Error::InvalidInput("coverage_frequencies: shape mismatch".into()));
    }
    let t_scores: Vec<f64> =
        scores.iter().zip(treated).filter(|(_, t)| **t).map(|(s, _)| *s).collect();
    let c_scores: Vec<f64> =
        scores.iter().zip(treated).filter(|(_, t)| !**t).map(|(s, _)| *s).collect();
    if t_scores.is_empty() || c_scores.is_empty() {
        return Err(Error::InvalidInput("coverage_frequencies: empty group".into()));
    }
    let band = |v: &[f64]| -> (f64, f64) {
        (
            stats::quantile(v, rule.lower_pct / 100.0),
            stats::quantile(v, rule.upper_pct / 100.0),
        )
    };
    let (c_lo, c_hi) = band(&c_scores);
    let (t_lo, t_hi) = band(&t_scores);
    let share_in = |v: &[f64], lo: f64, hi: f64| {
        v.iter().filter(|&&s| s >= lo && s <= hi).count() as f64 / v.len() as f64
    };
    Ok((share_in(&t_scores, c_lo, c_hi), share_in(&c_scores, t_lo, t_hi)))
}

/// Share of each group with at least one opposite-group unit whose score
/// differs by at most `tol` in relative terms: |s_i - s_j| <= tol *
/// max(s_i, s_j). Returns (share_treated, share_control).
///
/// Scores are assumed non-negative (propensities), which makes the relative
/// condition monotone in |s_i - s_j|, so only the nearest opposite neighbor
/// on each side needs checking.
pub fn close_comparisons(scores: &[f64], treated: &[bool], tol: f64) -> Result<(f64, f64)> {
    if scores.len() != treated.len() {
        return Err(Error::InvalidInput("close_comparisons: shape mismatch".into()));
    }
    if tol < 0.0 {
        return Err(Error::InvalidInput("close_comparisons: tol must be >= 0".into()));
    }
    let t_scores: Vec<f64> =
        scores.iter().zip(treated).filter(|(_, t)| **t).map(|(s, _)| *s).collect();
    let c_scores: Vec<f64> =
        scores.iter().zip(treated).filter(|(_, t)| !**t).map(|(s, _)| *s).collect();
    if t_scores.is_empty() || c_scores.is_empty() {
        return Err(Error::InvalidInput("close_comparisons: empty group".into()));
    }
    Ok((share_with_close(&t_scores, &c_scores, tol), share_with_close(&c_scores, &t_scores, tol)))
}

fn is_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.max(b)
}

fn share_with_close(group: &[f64], opposite: &[f64], tol: f64) -> f64 {
    let mut sorted = opposite.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let hits = group
        .iter()
        .filter(|&&s| {
            let idx = sorted.partition_point(|&v| v < s);
            let right = idx < sorted.len() && is_close(s, sorted[idx], tol);
            let left = idx > 0 && is_close(s, sorted[idx - 1], tol);
            left || right
        })
        .count();
    hits as f64 / group.len() as f64
}

/// Shared-edge histogram of scores by treatment group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapHistogram {
    /// bins + 1 edges shared by both groups.
    pub edges: Vec<f64>,
    pub treated_counts: Vec<usize>,
    pub control_counts: Vec<usize>,
}

impl OverlapHistogram {
    /// CSV export: bin_lo, bin_hi, count_treated, count_control.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_treated,count_control\n");
        for b in 0..self.treated_counts.len() {
            out.push_str(&format!(
                "{:.10},{:.10},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.treated_counts[b],
                self.control_counts[b]
            ));
        }
        out
    }
}

/// Histogram over `bins` equal-width bins spanning the pooled score range.
/// Degenerate spans put every observation in the first bin.
pub fn overlap_histogram(
    scores: &[f64],
    treated: &[bool],
    bins: usize,
) -> Result<OverlapHistogram> {
    if bins < 2 {
        return Err(Error::InvalidConfig("overlap_histogram: bins must be >= 2".into()));
    }
    if scores.is_empty() || scores.len() != treated.len() {
        return Err(Error::InvalidInput("overlap_histogram: shape mismatch".into()));
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let edges: Vec<f64> =
        (0..=bins).map(|b| min + span * b as f64 / bins as f64).collect();
    let mut treated_counts = vec![0usize; bins];
    let mut control_counts = vec![0usize; bins];
    for (&s, &t) in scores.iter().zip(treated) {
        let bin = if span <= 0.0 {
            0
        } else {
            (((s - min) / span * bins as f64) as usize).min(bins - 1)
        };
        if t {
            treated_counts[bin] += 1;
        } else {
            control_counts[bin] += 1;
        }
    }
    Ok(OverlapHistogram { edges, treated_counts, control_counts })
}

/// The four balance statistics plus the histogram, bundled for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub normalized_diff: f64,
    pub coverage_treated: f64,
    pub coverage_control: f64,
    pub close_comparison_treated: f64,
    pub close_comparison_control: f64,
    pub histogram: OverlapHistogram,
}

impl OverlapReport {
    pub fn compute(
        scores: &[f64],
        treated: &[bool],
        rule: &TrimRule,
        close_tol: f64,
        bins: usize,
    ) -> Result<OverlapReport> {
        let t_scores: Vec<f64> =
            scores.iter().zip(treated).filter(|(_, t)| **t).map(|(s, _)| *s).collect();
        let c_scores: Vec<f64> =
            scores.iter().zip(treated).filter(|(_, t)| !**t).map(|(s, _)| *s).collect();
        let normalized_diff = normalized_difference(&t_scores, &c_scores)?;
        let (coverage_treated, coverage_control) = coverage_frequencies(scores, treated, rule)?;
        let (close_t, close_c) = close_comparisons(scores, treated, close_tol)?;
        Ok(OverlapReport {
            normalized_diff,
            coverage_treated,
            coverage_control,
            close_comparison_treated: close_t,
            close_comparison_control: close_c,
            histogram: overlap_histogram(scores, treated, bins)?,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "normalized_difference:      {:>8.4}\n\
             coverage_treated:           {:>8.4}\n\
             coverage_control:           {:>8.4}\n\
             close_comparison_treated:   {:>8.4}\n\
             close_comparison_control:   {:>8.4}\n",
            self.normalized_diff,
            self.coverage_treated,
            self.coverage_control,
            self.close_comparison_treated,
            self.close_comparison_control
        )
    }
}
