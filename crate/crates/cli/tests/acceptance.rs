//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its runtime.
//!
//! Run with `cargo test -p paneltx-cli --test acceptance -- --nocapture`.

use std::time::Instant;

use paneltx_core::ate::{self, OsterInputs};
use paneltx_core::forest::{CapeRow, CapeSet};
use paneltx_core::hte;
use paneltx_core::matrix::Matrix;
use paneltx_core::nuisance::Residuals;
use paneltx_core::overlap;
use paneltx_core::panel::{CovariateKind, CovariateSchema, Observation, PanelDataset};
use paneltx_core::pipeline::{self, PipelineConfig};
use paneltx_core::policy::{self, AggregationKey, CostParams};
use paneltx_core::stats;
use paneltx_core::synth::{self, generate, DgpSpec, Preset};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Criterion {
    id: u32,
    name: &'static str,
    start: Instant,
}

impl Criterion {
    fn begin(id: u32, name: &'static str) -> Criterion {
        Criterion { id, name, start: Instant::now() }
    }

    fn pass(self) {
        println!(
            "ACCEPTANCE {:02} {}: PASS ({:.2}s)",
            self.id,
            self.name,
            self.start.elapsed().as_secs_f64()
        );
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Criterion 1: the stability bound reproduces the published inputs, and the
/// delta driving the effect to zero is near 3.26, in under a second.
#[test]
fn criterion_01_oster_reproduction() {
    let c = Criterion::begin(1, "oster_reproduction");
    let inputs = OsterInputs {
        beta_short: 1.90,
        r2_short: 0.01,
        beta_ctrl: 0.95,
        r2_ctrl: 0.44,
        delta: 0.5,
        r2_max: 1.3 * 0.44,
    };
    let beta_star = ate::oster_bound(&inputs).unwrap();
    assert!((beta_star - 0.80).abs() <= 0.01, "beta* = {}", beta_star);
    let delta_star = ate::oster_delta_to_zero(&inputs).unwrap();
    assert!((delta_star - 3.26).abs() <= 0.05, "delta* = {}", delta_star);
    assert!(c.elapsed() < 1.0, "took {:.2}s", c.elapsed());
    c.pass();
}

/// Criterion 2: given the headline totals, the per-dollar multiplier is
/// 30.1 within 0.1.
#[test]
fn criterion_02_multiplier_identity() {
    let c = Criterion::begin(2, "multiplier_identity");
    let payments = 27_239.0;
    let unit_cost = 500.0;
    // One treated unit with tau chosen so the included cost delta totals
    // 820,094 dollars.
    let tau = 820_094.0 * 10.0 / (payments * unit_cost);
    let schema = CovariateSchema { columns: vec![] };
    let ds = PanelDataset::new(
        vec![Observation {
            unit_id: "u0".into(),
            year: 2014,
            region: "r".into(),
            state: "A".into(),
            outcome: 1.0,
            outcome_cost: 5_000_000.0,
            treatment: payments,
            covariates: vec![],
        }],
        schema,
    )
    .unwrap();
    let capes = CapeSet {
        rows: vec![CapeRow {
            unit_id: "u0".into(),
            year: 2014,
            tau_hat: tau,
            se: 0.01,
            p_value: 0.001,
            significant: true,
        }],
    };
    let report = policy::cost_of_payments(
        &capes,
        &ds,
        &CostParams::new(unit_cost).unwrap(),
        true,
        AggregationKey::State,
    )
    .unwrap();
    assert!(
        (report.per_dollar_multiplier - 30.1).abs() <= 0.1,
        "multiplier = {}",
        report.per_dollar_multiplier
    );
    c.pass();
}

/// Criterion 3: with exact OLS nuisances, the residual-on-residual slope
/// equals the full OLS treatment coefficient to 1e-8, in under 5 seconds.
#[test]
fn criterion_03_fwl_exactness() {
    let c = Criterion::begin(3, "fwl_exactness");
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let n = 2000;
    let d = 4;
    use rand_distr::{Distribution, Normal};
    let norm = Normal::new(0.0, 1.0).unwrap();

    let mut xrows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let xs: Vec<f64> = (0..d).map(|_| norm.sample(&mut rng)).collect();
        let pi = (3.0 + xs[0] - 0.5 * xs[2] + norm.sample(&mut rng)).max(0.0);
        let yi = 2.0 + 0.07 * pi + 0.9 * xs[0] - 0.4 * xs[1] + norm.sample(&mut rng);
        rows.push(Observation {
            unit_id: format!("u{}", i),
            year: 2014,
            region: format!("r{}", i % 10),
            state: "A".into(),
            outcome: yi,
            outcome_cost: 0.0,
            treatment: pi,
            covariates: xs.clone(),
        });
        xrows.push(xs);
        p.push(pi);
        y.push(yi);
    }
    let schema = CovariateSchema {
        columns: (0..d)
            .map(|j| (format!("x{}", j + 1), CovariateKind::Continuous))
            .collect(),
    };
    let ds = PanelDataset::new(rows, schema).unwrap();

    // Full OLS y ~ [1, p, X].
    let full_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = vec![1.0, p[i]];
            r.extend(&xrows[i]);
            r
        })
        .collect();
    let full = synth::oracle_ols(&Matrix::from_rows(&full_rows), &y).unwrap();

    // Exact OLS nuisances on [1, X].
    let base_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = vec![1.0];
            r.extend(&xrows[i]);
            r
        })
        .collect();
    let base = Matrix::from_rows(&base_rows);
    let beta_y = synth::oracle_ols(&base, &y).unwrap();
    let beta_p = synth::oracle_ols(&base, &p).unwrap();
    let predict = |beta: &[f64], i: usize| -> f64 {
        beta[0] + (0..d).map(|j| beta[j + 1] * xrows[i][j]).sum::<f64>()
    };
    let gamma_y: Vec<f64> = (0..n).map(|i| y[i] - predict(&beta_y, i)).collect();
    let gamma_p: Vec<f64> = (0..n).map(|i| p[i] - predict(&beta_p, i)).collect();

    let res = Residuals {
        y_transformed: y.clone(),
        gamma_y,
        gamma_p,
        fold: vec![0; n],
        outcome_fit_correlation: 0.0,
        treatment_fit_correlation: 0.0,
        selected_lambda: 0.0,
    };
    let est = ate::residualized_ate(&res, &ds, "unit").unwrap();
    // Both sides on the per-$10 scale.
    assert!(
        (est.alpha_hat - full[1] * 10.0).abs() < 1e-8,
        "residualized {} vs full OLS {}",
        est.alpha_hat,
        full[1] * 10.0
    );
    assert!(c.elapsed() < 5.0, "took {:.2}s", c.elapsed());
    c.pass();
}

fn acceptance_pipeline(seed: u64) -> PipelineConfig {
    PipelineConfig { seed, ..PipelineConfig::default() }
}

/// Criterion 4: on the confounded preset (4000 rows, 2000 trees, 10 seeds)
/// the uncontrolled regression overstates the truth by more than 25% while
/// the residualized, AIPW, and forest-mean estimators agree with the truth
/// and with one another.
#[test]
fn criterion_04_estimator_concordance() {
    let c = Criterion::begin(4, "estimator_concordance");
    let truth = 2.0;
    let seeds = 10;
    let mut naive = Vec::new();
    let mut estimates = vec![Vec::new(); 3]; // residualized, aipw, cape_mean
    let mut ses = vec![Vec::new(); 3];
    for s in 0..seeds {
        let (ds, _) = generate(&DgpSpec::new(Preset::Confounded, 2000, 2, 400 + s)).unwrap();
        let suite = pipeline::run_ate_suite(&ds, &acceptance_pipeline(500 + s)).unwrap();
        naive.push(suite.estimates[0].alpha_hat);
        for (k, idx) in [2usize, 3, 4].iter().enumerate() {
            estimates[k].push(suite.estimates[*idx].alpha_hat);
            ses[k].push(suite.estimates[*idx].se.unwrap());
        }
    }
    let mean_naive = stats::mean(&naive);
    assert!(
        mean_naive > truth * 1.25,
        "naive {} does not overstate truth {} by 25%",
        mean_naive,
        truth
    );
    let names = ["residualized", "aipw", "cape_mean"];
    let means: Vec<f64> = estimates.iter().map(|v| stats::mean(v)).collect();
    let mean_ses: Vec<f64> = ses.iter().map(|v| stats::mean(v)).collect();
    for k in 0..3 {
        assert!(
            (means[k] - truth).abs() < 2.0 * mean_ses[k],
            "{}: {} +- {} vs truth {}",
            names[k],
            means[k],
            mean_ses[k],
            truth
        );
    }
    for a in 0..3 {
        for b in (a + 1)..3 {
            let combined = (mean_ses[a].powi(2) + mean_ses[b].powi(2)).sqrt();
            assert!(
                (means[a] - means[b]).abs() < 2.0 * combined,
                "{} {} vs {} {} (combined se {})",
                names[a],
                means[a],
                names[b],
                means[b],
                combined
            );
        }
    }
    assert!(c.elapsed() < 600.0, "took {:.1}s", c.elapsed());
    c.pass();
}

/// Criterion 5: on the LIS-style heterogeneous preset (4000 rows) the
/// subgroup contrast recovers 0.18 within 0.08 and the driving covariate
/// ranks first in split importance in at least 8 of 10 seeds.
#[test]
fn criterion_05_heterogeneity_recovery() {
    let c = Criterion::begin(5, "heterogeneity_recovery");
    let seeds = 10;
    let mut diffs = Vec::new();
    let mut lis_first = 0;
    for s in 0..seeds {
        let (ds, _) = generate(&DgpSpec::new(Preset::LisHet, 2000, 2, 600 + s)).unwrap();
        let suite = pipeline::run_ate_suite(&ds, &acceptance_pipeline(700 + s)).unwrap();
        let spec = hte::GroupSpec::Threshold { column: "lis_share".into(), cut: 0.5 };
        let sub = hte::subgroup_cape(&suite.capes, &suite.analysis_ds, &spec).unwrap();
        diffs.push(sub.diff);

        let imp = paneltx_core::forest::split_frequency_importance(&suite.causal_forest).unwrap();
        let ranking = paneltx_core::forest::importance_ranking(&imp);
        let lis_index = suite.analysis_ds.schema().index_of("lis_share").unwrap();
        if ranking[0] == lis_index {
            lis_first += 1;
        }
    }
    let mean_diff = stats::mean(&diffs);
    assert!(
        (mean_diff - 0.18).abs() <= 0.08,
        "subgroup contrast = {} (per-seed {:?})",
        mean_diff,
        diffs
    );
    assert!(lis_first >= 8, "driver ranked first in only {}/10 seeds", lis_first);
    assert!(c.elapsed() < 600.0, "took {:.1}s", c.elapsed());
    c.pass();
}

/// Criterion 6: on the null preset (4000 rows, 20 seeds) the mean share of
/// significant units stays at or below 8% and the homogeneity test rejects
/// in at most 10% of seeds.
#[test]
fn criterion_06_null_calibration() {
    let c = Criterion::begin(6, "null_calibration");
    let seeds = 20;
    let mut shares = Vec::new();
    let mut levene_rejections = 0;
    for s in 0..seeds {
        let (ds, _) = generate(&DgpSpec::new(Preset::Null, 2000, 2, 800 + s)).unwrap();
        let mut cfg = acceptance_pipeline(900 + s);
        cfg.causal_trees = 500;
        let suite = pipeline::run_ate_suite(&ds, &cfg).unwrap();
        let treatments = suite.analysis_ds.column_values("treatment").unwrap();
        let share = hte::significance_share(&suite.capes, &treatments).unwrap();
        shares.push(share.unit_share);

        // Homogeneity of effects across a covariate split.
        let x1 = suite.analysis_ds.column_values("x1").unwrap();
        let tau = suite.capes.tau_values();
        let hi: Vec<f64> = tau
            .iter()
            .zip(&x1)
            .filter(|(_, v)| **v > 0.0)
            .map(|(t, _)| *t)
            .collect();
        let lo: Vec<f64> = tau
            .iter()
            .zip(&x1)
            .filter(|(_, v)| **v <= 0.0)
            .map(|(t, _)| *t)
            .collect();
        let (_, p) = hte::levene_test(&[hi, lo]).unwrap();
        if p < 0.05 {
            levene_rejections += 1;
        }
    }
    let mean_share = stats::mean(&shares);
    assert!(mean_share <= 0.08, "significance share = {} ({:?})", mean_share, shares);
    assert!(
        levene_rejections <= 2,
        "homogeneity rejected in {}/20 seeds",
        levene_rejections
    );
    c.pass();
}

/// Criterion 7: percentile trimming retains 94-96% of 10,000 distinct
/// scores, and the balance diagnostics match brute-force oracles exactly on
/// 100 random instances.
#[test]
fn criterion_07_overlap_diagnostics() {
    let c = Criterion::begin(7, "overlap_diagnostics");
    // Trimming share on distinct scores.
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen::<f64>() * 0.5).collect();
    use rand::seq::SliceRandom;
    scores.shuffle(&mut rng);
    let schema = CovariateSchema { columns: vec![] };
    let rows: Vec<Observation> = (0..n)
        .map(|i| Observation {
            unit_id: format!("u{}", i),
            year: 2014,
            region: "r".into(),
            state: "A".into(),
            outcome: 0.0,
            outcome_cost: 0.0,
            treatment: 0.0,
            covariates: vec![],
        })
        .collect();
    let ds = PanelDataset::new(rows, schema).unwrap();
    let (kept, _) = overlap::trim(&ds, &scores, &overlap::TrimRule::default()).unwrap();
    let share = kept.len() as f64 / n as f64;
    assert!((0.94..=0.96).contains(&share), "retained share = {}", share);

    // Oracle agreement on 100 random instances.
    for instance in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(7200 + instance);
        let m = 50 + (rng.gen::<f64>() * 450.0) as usize;
        let scores: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let mut treated: Vec<bool> = (0..m).map(|_| rng.gen::<f64>() < 0.4).collect();
        treated[0] = true;
        treated[1] = false;

        let ts: Vec<f64> = scores
            .iter()
            .zip(&treated)
            .filter(|(_, t)| **t)
            .map(|(s, _)| *s)
            .collect();
        let cs: Vec<f64> = scores
            .iter()
            .zip(&treated)
            .filter(|(_, t)| !**t)
            .map(|(s, _)| *s)
            .collect();

        // Normalized difference against the direct formula.
        let nd = overlap::normalized_difference(&ts, &cs).unwrap();
        let hand = (stats::mean(&ts) - stats::mean(&cs))
            / ((stats::sample_variance(&ts) + stats::sample_variance(&cs)) / 2.0).sqrt();
        assert_eq!(nd, hand, "instance {}", instance);

        // Coverage against the explicit band filter.
        let rule = overlap::TrimRule::default();
        let (ct, cc) = overlap::coverage_frequencies(&scores, &treated, &rule).unwrap();
        let band = |other: &[f64]| {
            (stats::quantile(other, 0.025), stats::quantile(other, 0.975))
        };
        let (lo, hi) = band(&cs);
        let oracle_ct =
            ts.iter().filter(|&&s| s >= lo && s <= hi).count() as f64 / ts.len() as f64;
        let (lo, hi) = band(&ts);
        let oracle_cc =
            cs.iter().filter(|&&s| s >= lo && s <= hi).count() as f64 / cs.len() as f64;
        assert_eq!((ct, cc), (oracle_ct, oracle_cc), "instance {}", instance);

        // Close comparisons against the O(n^2) scan.
        let (st, sc) = overlap::close_comparisons(&scores, &treated, 0.10).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 0.10 * a.max(b);
        let oracle_st = ts.iter().filter(|&&a| cs.iter().any(|&b| close(a, b))).count() as f64
            / ts.len() as f64;
        let oracle_sc = cs.iter().filter(|&&a| ts.iter().any(|&b| close(a, b))).count() as f64
            / cs.len() as f64;
        assert_eq!((st, sc), (oracle_st, oracle_sc), "instance {}", instance);
    }
    c.pass();
}

/// Criterion 8: the step-down adjustment reproduces the worked example and
/// controls the familywise error rate at or below 7% across 1000
/// replications of 10 true nulls.
#[test]
fn criterion_08_holm_bonferroni() {
    let c = Criterion::begin(8, "holm_bonferroni");
    let adj = hte::holm_bonferroni(&[0.01, 0.04, 0.03]);
    assert!((adj[0] - 0.03).abs() < 1e-12);
    assert!((adj[1] - 0.06).abs() < 1e-12);
    assert!((adj[2] - 0.06).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let reps = 1000;
    let mut family_errors = 0;
    for _ in 0..reps {
        let ps: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
        let adj = hte::holm_bonferroni(&ps);
        if adj.iter().any(|&p| p < 0.05) {
            family_errors += 1;
        }
    }
    let fwe = family_errors as f64 / reps as f64;
    assert!(fwe <= 0.07, "familywise error rate = {}", fwe);
    c.pass();
}

/// Criterion 9: cloning the reference region as the banned region
/// reproduces the reference cost-of-payments total within 15%.
#[test]
fn criterion_09_ban_counterfactual_consistency() {
    let c = Criterion::begin(9, "ban_counterfactual_consistency");
    let (ds, _) = generate(&DgpSpec::new(Preset::Const, 500, 2, 91)).unwrap();
    let mut cfg = acceptance_pipeline(92);
    cfg.causal_trees = 1000;
    let suite = pipeline::run_ate_suite(&ds, &cfg).unwrap();

    let params = CostParams::new(500.0).unwrap();
    let cost = policy::cost_of_payments(
        &suite.capes,
        &suite.analysis_ds,
        &params,
        true,
        AggregationKey::State,
    )
    .unwrap();

    // The banned region is a clone of the reference region.
    let propensity = pipeline::binary_propensity_model(&suite.analysis_ds, &cfg).unwrap();
    let imputed = policy::impute_ban_payments(
        &suite.analysis_ds,
        &suite.analysis_ds,
        &propensity,
        false,
    )
    .unwrap();
    let y_eff = suite.residuals.y_transformed.clone();
    let y_hat_eff: Vec<f64> =
        y_eff.iter().zip(&suite.residuals.gamma_y).map(|(y, g)| y - g).collect();
    let p_raw = suite.analysis_ds.column_values("treatment").unwrap();
    let p_hat_eff: Vec<f64> =
        p_raw.iter().zip(&suite.residuals.gamma_p).map(|(p, g)| p - g).collect();
    let training = policy::ForestTrainingRefs {
        y: &y_eff,
        p: &p_raw,
        y_hat: &y_hat_eff,
        p_hat: &p_hat_eff,
    };
    let ban = policy::ban_savings(
        &suite.analysis_ds,
        &imputed,
        &suite.causal_forest,
        &training,
        &params,
        true,
        AggregationKey::State,
    )
    .unwrap();

    let rel = (ban.total_cost_delta - cost.total_cost_delta).abs()
        / cost.total_cost_delta.abs().max(1e-9);
    assert!(
        rel <= 0.15,
        "ban savings {} vs cost-of-payments {} ({:.1}% apart)",
        ban.total_cost_delta,
        cost.total_cost_delta,
        100.0 * rel
    );
    c.pass();
}

/// Criterion 10: every CLI command, rerun with the same configuration and
/// seed, produces byte-identical outputs.
#[test]
fn criterion_10_cli_determinism() {
    let c = Criterion::begin(10, "cli_determinism");
    let bin = env!("CARGO_BIN_EXE_paneltx");
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("paneltx.toml"),
        r#"
[synth]
preset = "confounded"
n_units = 150
n_years = 2

[pipeline]
seed = 17
nuisance_trees = 80
aipw_trees = 60
causal_trees = 120
k_folds = 3

[input]
data = "base/data.csv"
schema = "base/schema.toml"

[oster]
beta_short = 1.90
r2_short = 0.01
beta_ctrl = 0.95
r2_ctrl = 0.44

[policy]
banned_state = "B"

[output]
dir = "base"
"#,
    )
    .unwrap();

    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .current_dir(dir.path())
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{:?} failed: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    run(&["synth"]);

    for cmd in ["synth", "summarize", "ate", "cate", "overlap", "oster", "policy"] {
        let out1 = String::from_utf8(run(&[cmd, "--out", "run1"])).unwrap();
        let out2 = String::from_utf8(run(&[cmd, "--out", "run2"])).unwrap();
        // stdout echoes the output directory; normalize it away.
        assert_eq!(
            out1.replace("run1", "OUT"),
            out2.replace("run2", "OUT"),
            "{} stdout differs between reruns",
            cmd
        );
        let mut names: Vec<_> = std::fs::read_dir(dir.path().join("run1"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty(), "{} wrote nothing", cmd);
        for name in names {
            let a = std::fs::read(dir.path().join("run1").join(&name)).unwrap();
            let b = std::fs::read(dir.path().join("run2").join(&name)).unwrap();
            assert_eq!(a, b, "{}: {:?} differs between reruns", cmd, name);
        }
        std::fs::remove_dir_all(dir.path().join("run1")).unwrap();
        std::fs::remove_dir_all(dir.path().join("run2")).unwrap();
    }
    c.pass();
}
