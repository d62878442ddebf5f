//! Post-estimation heterogeneity analysis: significance shares,
//! distributional tests, group contrasts with effect sizes and multiplicity
//! correction, and subgroup effect comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::CapeSet;
use crate::panel::PanelDataset;
use crate::stats;

/// Share of units with a positive, significant effect, plus the
/// treatment-dollar-weighted variant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SignificanceShare {
    pub unit_share: f64,
    pub dollar_share: f64,
    pub n_significant: usize,
}

pub fn significance_share(capes: &CapeSet, treatments: &[f64]) -> Result<SignificanceShare> {
    if capes.is_empty() {
        return Err(Error::InvalidInput("significance_share: empty CAPE set".into()));
    }
    if treatments.len() != capes.len() {
        return Err(Error::InvalidInput("significance_share: treatment vector mismatch".into()));
    }
    let mut hits = 0usize;
    let mut dollars_hit = 0.0;
    let mut dollars_total = 0.0;
    for (row, &p) in capes.rows.iter().zip(treatments) {
        dollars_total += p;
        if row.significant && row.tau_hat > 0.0 {
            hits += 1;
            dollars_hit += p;
        }
    }
    Ok(SignificanceShare {
        unit_share: hits as f64 / capes.len() as f64,
        dollar_share: if dollars_total > 0.0 { dollars_hit / dollars_total } else { 0.0 },
        n_significant: hits,
    })
}

/// Brown-Forsythe variant of Levene's homogeneity-of-variance test:
/// a one-way F test on median-centered absolute deviations.
pub fn levene_test(groups: &[Vec<f64>]) -> Result<(f64, f64)> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("levene_test: need >= 2 groups".into()));
    }
    for (gi, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::DegenerateGroup(gi.to_string()));
        }
    }
    let k = groups.len();
    let n_total: usize = groups.iter().map(|g| g.len()).sum();

    let z_groups: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let med = stats::median(g);
            g.iter().map(|v| (v - med).abs()).collect()
        })
        .collect();
    let z_means: Vec<f64> = z_groups.iter().map(|z| stats::mean(z)).collect();
    let grand = z_groups.iter().flatten().sum::<f64>() / n_total as f64;

    let ssb: f64 = z_groups
        .iter()
        .zip(&z_means)
        .map(|(z, m)| z.len() as f64 * (m - grand) * (m - grand))
        .sum();
    let ssw: f64 = z_groups
        .iter()
        .zip(&z_means)
        .map(|(z, m)| z.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
        .sum();

    let df1 = (k - 1) as f64;
    let df2 = (n_total - k) as f64;
    if ssw <= 0.0 {
        return Ok(if ssb <= 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) });
    }
    let f_stat = (ssb / df1) / (ssw / df2);
    Ok((f_stat, stats::f_upper_p(f_stat, df1, df2)))
}

/// Kolmogorov-Smirnov and Mann-Whitney U results.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DistributionTests {
    pub ks_stat: f64,
    pub ks_p: f64,
    /// U for sample a: the count of (a, b) pairs with a > b, ties counting
    /// one half.
    pub mwu_u: f64,
    pub mwu_p: f64,
}

/// Two-sided KS and Mann-Whitney U tests. Exact p-values are used when both
/// samples have at most 50 observations and no cross-sample ties; larger or
/// tied samples fall back to the asymptotic approximations.
pub fn distribution_tests(sample_a: &[f64], sample_b: &[f64]) -> Result<DistributionTests> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::InvalidInput("distribution_tests: empty sample".into()));
    }
    let m = sample_a.len();
    let n = sample_b.len();
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let has_ties = has_cross_ties(&a, &b);
    let exact_ok = m <= 50 && n <= 50 && !has_ties;

    let d = ks_statistic(&a, &b);
    let ks_p = if exact_ok { ks_exact_p(d, m, n) } else { ks_asymptotic_p(d, m, n) };

    let u = mwu_statistic(&a, &b);
    let mwu_p = if exact_ok {
        mwu_exact_p(u.round() as usize, m, n)
    } else {
        mwu_asymptotic_p(u, &a, &b)
    };

    Ok(DistributionTests { ks_stat: d, ks_p, mwu_u: u, mwu_p })
}

fn has_cross_ties(a: &[f64], b: &[f64]) -> bool {
    let mut j = 0usize;
    for &v in a {
        while j < b.len() && b[j] < v {
            j += 1;
        }
        if j < b.len() && b[j] == v {
            return true;
        }
    }
    false
}

/// sup |F_a - F_b| over the pooled sample (inputs sorted).
fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = (a.len(), b.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d: f64 = 0.0;
    while i < m || j < n {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < m && a[i] <= v {
            i += 1;
        }
        while j < n && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / m as f64 - j as f64 / n as f64).abs());
    }
    d
}

/// Exact two-sided KS p-value by counting lattice paths that stay strictly
/// inside the band |i/m - j/n| < d.
fn ks_exact_p(d: f64, m: usize, n: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let d_eff = d - 1e-10;
    let mut row = vec![0.0_f64; n + 1];
    for i in 0..=m {
        let mut next = vec![0.0_f64; n + 1];
        for j in 0..=n {
            let diff = (i as f64 / m as f64 - j as f64 / n as f64).abs();
            if diff >= d_eff {
                continue;
            }
            let mut v = 0.0;
            if i == 0 && j == 0 {
                v = 1.0;
            } else {
                if i > 0 {
                    v += row[j];
                }
                if j > 0 {
                    v += next[j - 1];
                }
            }
            next[j] = v;
        }
        row = next;
    }
    let total = binomial(m + n, m);
    (1.0 - row[n] / total).clamp(0.0, 1.0)
}

fn ks_asymptotic_p(d: f64, m: usize, n: usize) -> f64 {
    let en = ((m * n) as f64 / (m + n) as f64).sqrt();
    let lambda = en * d;
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0_f64;
    for i in 1..=k {
        c = c * (n - k + i) as f64 / i as f64;
    }
    c
}

/// U for sample a (#{a > b} with half weight on ties); inputs sorted.
fn mwu_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    let mut below = 0usize; // b[j] < a[i]
    let mut upto = 0usize; // b[j] <= a[i]
    for &v in a {
        while below < b.len() && b[below] < v {
            below += 1;
        }
        while upto < b.len() && b[upto] <= v {
            upto += 1;
        }
        u += below as f64 + 0.5 * (upto - below) as f64;
    }
    u
}

/// Exact two-sided p via the null distribution of U (tie-free samples).
fn mwu_exact_p(u: usize, m: usize, n: usize) -> f64 {
    let mn = m * n;
    // counts[j][u]: interleavings using j items of sample a with statistic u.
    let mut counts = vec![vec![0.0_f64; mn + 1]; m + 1];
    counts[0][0] = 1.0;
    for t in 0..(m + n) {
        let mut next = vec![vec![0.0_f64; mn + 1]; m + 1];
        for j in 0..=m.min(t) {
            let b_used = t - j;
            for uu in 0..=mn {
                let c = counts[j][uu];
                if c == 0.0 {
                    continue;
                }
                if b_used < n {
                    next[j][uu] += c;
                }
                if j < m && uu + b_used <= mn {
                    next[j + 1][uu + b_used] += c;
                }
            }
        }
        counts = next;
    }
    let total = binomial(m + n, m);
    let u_low = u.min(mn - u);
    let cdf: f64 = (0..=u_low).map(|v| counts[m][v]).sum::<f64>() / total;
    (2.0 * cdf).clamp(0.0, 1.0)
}

/// Normal approximation with tie correction and continuity correction.
fn mwu_asymptotic_p(u: f64, a: &[f64], b: &[f64]) -> f64 {
    let m = a.len() as f64;
    let n = b.len() as f64;
    let total = m + n;
    let mean = m * n / 2.0;

    // Tie correction over the pooled sample.
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut tie_sum = 0.0;
    let mut i = 0usize;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    let var = m * n / 12.0 * ((total + 1.0) - tie_sum / (total * (total - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let diff = u - mean;
    let cc = if diff == 0.0 { 0.0 } else { 0.5 * diff.signum() };
    let z = (diff - cc) / var.sqrt();
    stats::normal_two_sided_p(z)
}

/// Holm-Bonferroni step-down adjustment. Preserves input order; adjusted
/// values are monotone in the raw ordering, capped at 1.
pub fn holm_bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[idx]).min(1.0);
        running = running.max(scaled);
        adjusted[idx] = running;
    }
    adjusted
}

/// Cohen's d with a pooled standard deviation; zero when the pooled sd
/// vanishes.
pub fn cohen_d(a: &[f64], b: &[f64]) -> f64 {
    let na = a.len() as f64;
    let nb = b.len() as f64;
    if na < 1.0 || nb < 1.0 {
        return 0.0;
    }
    let va = stats::sample_variance(a);
    let vb = stats::sample_variance(b);
    let denom_df = (na + nb - 2.0).max(1.0);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / denom_df).sqrt();
    if pooled <= 0.0 {
        return 0.0;
    }
    (stats::mean(a) - stats::mean(b)) / pooled
}

/// Welch's unequal-variance t-test; returns the two-sided p-value.
pub fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let va = stats::sample_variance(a);
    let vb = stats::sample_variance(b);
    let se2 = va / na + vb / nb;
    let diff = stats::mean(a) - stats::mean(b);
    if se2 <= 0.0 {
        return if diff == 0.0 { 1.0 } else { 0.0 };
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0).max(1.0)
            + (vb / nb) * (vb / nb) / (nb - 1.0).max(1.0));
    stats::t_two_sided_p(t, df.max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectBand {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectBand {
    /// Cohen's 0.2 / 0.5 / 0.8 banding of |d|.
    pub fn from_d(d: f64) -> EffectBand {
        let a = d.abs();
        if a >= 0.8 {
            EffectBand::Large
        } else if a >= 0.5 {
            EffectBand::Medium
        } else if a >= 0.2 {
            EffectBand::Small
        } else {
            EffectBand::Negligible
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EffectBand::Negligible => "negligible",
            EffectBand::Small => "small",
            EffectBand::Medium => "medium",
            EffectBand::Large => "large",
        }
    }
}

/// Characteristic contrast between high- and low-effect units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupComparison {
    pub variable: String,
    pub mean_high: f64,
    pub mean_low: f64,
    pub std_diff: f64,
    pub p_raw: f64,
    pub p_adj: f64,
    pub band: EffectBand,
}

/// Compares covariate means between units with effects above the third
/// quartile and below the first, with Welch tests and Holm-Bonferroni
/// adjustment across the variable list.
pub fn group_characteristics(
    capes: &CapeSet,
    ds: &PanelDataset,
    variables: &[&str],
) -> Result<Vec<GroupComparison>> {
    if capes.len() != ds.len() {
        return Err(Error::InvalidInput("group_characteristics: CAPE/dataset mismatch".into()));
    }
    if capes.len() < 8 {
        return Err(Error::InvalidInput(
            "group_characteristics: need >= 8 units for quartile groups".into(),
        ));
    }
    let tau = capes.tau_values();
    let q1 = stats::quantile(&tau, 0.25);
    let q3 = stats::quantile(&tau, 0.75);
    if q1 >= q3 {
        return Err(Error::DegenerateQuartiles);
    }
    let high: Vec<usize> = (0..tau.len()).filter(|&i| tau[i] > q3).collect();
    let low: Vec<usize> = (0..tau.len()).filter(|&i| tau[i] < q1).collect();
    if high.is_empty() || low.is_empty() {
        return Err(Error::DegenerateQuartiles);
    }

    let mut rows = Vec::with_capacity(variables.len());
    let mut raw_ps = Vec::with_capacity(variables.len());
    for name in variables {
        let values = ds.column_values(name)?;
        let hv: Vec<f64> = high.iter().map(|&i| values[i]).collect();
        let lv: Vec<f64> = low.iter().map(|&i| values[i]).collect();
        let d = cohen_d(&hv, &lv);
        let p = welch_p(&hv, &lv);
        raw_ps.push(p);
        rows.push(GroupComparison {
            variable: name.to_string(),
            mean_high: stats::mean(&hv),
            mean_low: stats::mean(&lv),
            std_diff: d,
            p_raw: p,
            p_adj: f64::NAN,
            band: EffectBand::from_d(d),
        });
    }
    let adjusted = holm_bonferroni(&raw_ps);
    for (row, p_adj) in rows.iter_mut().zip(adjusted) {
        row.p_adj = p_adj;
    }
    Ok(rows)
}

/// CSV export shaped like the high-vs-low characteristics table.
pub fn group_characteristics_csv(rows: &[GroupComparison]) -> String {
    let mut out = String::from("variable,mean_high,mean_low,std_diff,p_raw,p_adj,band\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.variable,
            r.mean_high,
            r.mean_low,
            r.std_diff,
            r.p_raw,
            r.p_adj,
            r.band.label()
        ));
    }
    out
}

/// How subgroups are carved out of the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum GroupSpec {
    /// Binary covariate: 1 is the high group.
    Binary { column: String },
    /// Continuous covariate split at a fixed cut: above is high.
    Threshold { column: String, cut: f64 },
    /// Above the third quartile vs below the first; the middle is excluded.
    Quartiles { column: String },
}

impl GroupSpec {
    pub fn column(&self) -> &str {
        match self {
            GroupSpec::Binary { column } => column,
            GroupSpec::Threshold { column, .. } => column,
            GroupSpec::Quartiles { column } => column,
        }
    }

    /// Membership per row: Some(true) = high, Some(false) = low, None =
    /// excluded.
    pub fn resolve(&self, ds: &PanelDataset) -> Result<Vec<Option<bool>>> {
        let values = ds.column_values(self.column())?;
        Ok(match self {
            GroupSpec::Binary { .. } => values.iter().map(|&v| Some(v > 0.5)).collect(),
            GroupSpec::Threshold { cut, .. } => values.iter().map(|&v| Some(v > *cut)).collect(),
            GroupSpec::Quartiles { .. } => {
                let q1 = stats::quantile(&values, 0.25);
                let q3 = stats::quantile(&values, 0.75);
                values
                    .iter()
                    .map(|&v| {
                        if v > q3 {
                            Some(true)
                        } else if v < q1 {
                            Some(false)
                        } else {
                            None
                        }
                    })
                    .collect()
            }
        })
    }
}

/// Inverse-variance-weighted subgroup effects and their difference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupCape {
    pub variable: String,
    pub cape_high: f64,
    pub se_high: f64,
    pub n_high: usize,
    pub cape_low: f64,
    pub se_low: f64,
    pub n_low: usize,
    pub diff: f64,
    pub se_diff: f64,
    pub p_diff: f64,
}

pub fn subgroup_cape(capes: &CapeSet, ds: &PanelDataset, spec: &GroupSpec) -> Result<SubgroupCape> {
    if capes.len() != ds.len() {
        return Err(Error::InvalidInput("subgroup_cape: CAPE/dataset mismatch".into()));
    }
    let membership = spec.resolve(ds)?;
    let mut pools: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for (row, m) in capes.rows.iter().zip(&membership) {
        if let Some(high) = m {
            pools[usize::from(*high)].push((row.tau_hat, row.se));
        }
    }
    let [low_pool, high_pool] = pools;
    if high_pool.is_empty() {
        return Err(Error::EmptyGroup(format!("{} high", spec.column())));
    }
    if low_pool.is_empty() {
        return Err(Error::EmptyGroup(format!("{} low", spec.column())));
    }

    let ivw = |pool: &[(f64, f64)]| -> (f64, f64) {
        let mut wsum = 0.0;
        let mut wtau = 0.0;
        for &(tau, se) in pool {
            let w = 1.0 / (se * se).max(1e-24);
            wsum += w;
            wtau += w * tau;
        }
        (wtau / wsum, (1.0 / wsum).sqrt())
    };
    let (cape_high, se_high) = ivw(&high_pool);
    let (cape_low, se_low) = ivw(&low_pool);
    let diff = cape_high - cape_low;
    let se_diff = (se_high * se_high + se_low * se_low).sqrt();
    let p_diff = stats::normal_two_sided_p(diff / se_diff);
    Ok(SubgroupCape {
        variable: spec.column().to_string(),
        cape_high,
        se_high,
        n_high: high_pool.len(),
        cape_low,
        se_low,
        n_low: low_pool.len(),
        diff,
        se_diff,
        p_diff,
    })
}

/// CSV export shaped like the subgroup-effects table.
pub fn subgroup_table_csv(rows: &[SubgroupCape]) -> String {
    let mut out = String::from(
        "variable,group,cape,se,n,diff,se_diff,p_diff\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},low,{:.6},{:.6},{},,,\n",
            r.variable, r.cape_low, r.se_low, r.n_low
        ));
        out.push_str(&format!(
            "{},high,{:.6},{:.6},{},{:.6},{:.6},{:.6}\n",
            r.variable, r.cape_high, r.se_high, r.n_high, r.diff, r.se_diff, r.p_diff
        ));
    }
    out
}

/// Fixed-width histogram of effect estimates (default width 0.05 per $10),
/// with a separate count of significant units per bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapeHistogram {
    pub bin_lo: Vec<f64>,
    pub bin_hi: Vec<f64>,
    pub count: Vec<usize>,
    pub count_significant: Vec<usize>,
}

pub fn cape_histogram(capes: &CapeSet, bin_width: f64) -> Result<CapeHistogram> {
    if capes.is_empty() {
        return Err(Error::InvalidInput("cape_histogram: empty CAPE set".into()));
    }
    if bin_width <= 0.0 {
        return Err(Error::InvalidConfig("cape_histogram: bin width must be > 0".into()));
    }
    let tau = capes.tau_values();
    let min = tau.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = tau.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = (min / bin_width).floor() as i64;
    let last = (max / bin_width).floor() as i64;
    let bins = (last - first + 1) as usize;
    let mut hist = CapeHistogram {
        bin_lo: (0..bins).map(|b| (first + b as i64) as f64 * bin_width).collect(),
        bin_hi: (0..bins).map(|b| (first + b as i64 + 1) as f64 * bin_width).collect(),
        count: vec![0; bins],
        count_significant: vec![0; bins],
    };
    for row in &capes.rows {
        let b = ((row.tau_hat / bin_width).floor() as i64 - first) as usize;
        let b = b.min(bins - 1);
        hist.count[b] += 1;
        if row.significant {
            hist.count_significant[b] += 1;
        }
    }
    Ok(hist)
}

impl CapeHistogram {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,count_significant\n");
        for b in 0..self.count.len() {
            out.push_str(&format!(
                "{:.6},{:.6},{},{}\n",
                self.bin_lo[b], self.bin_hi[b], self.count[b], self.count_significant[b]
            ));
        }
        out
    }
}
