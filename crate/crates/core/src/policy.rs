//! Policy-cost accounting: per-unit claim and cost deltas implied by
//! estimated effects, regional aggregates, and gift-ban counterfactuals via
//! propensity-matched payment imputation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{self, CapeSet, ForestModel, EFFECT_SCALE_DOLLARS};
use crate::panel::PanelDataset;
use crate::synth::better_match;

/// Dollars per claim used to convert claim deltas into cost deltas.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostParams {
    pub unit_cost: f64,
}

impl CostParams {
    pub fn new(unit_cost: f64) -> Result<CostParams> {
        if unit_cost <= 0.0 {
            return Err(Error::InvalidConfig("unit_cost must be > 0".into()));
        }
        Ok(CostParams { unit_cost })
    }
}

/// Which rows enter the unit-cost ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostSample {
    Treated,
    All,
}

/// Average cost per claim over the reference sample: total cost / total
/// claims.
pub fn unit_cost(ds: &PanelDataset, sample: CostSample) -> Result<f64> {
    let mut claims = 0.0;
    let mut cost = 0.0;
    for obs in ds.rows() {
        if sample == CostSample::Treated && obs.treatment <= 0.0 {
            continue;
        }
        claims += obs.outcome;
        cost += obs.outcome_cost;
    }
    if claims <= 0.0 {
        return Err(Error::ZeroClaims);
    }
    Ok(cost / claims)
}

/// Per-unit ledger row of a policy report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyUnitRow {
    pub unit_id: String,
    pub year: i32,
    pub region: String,
    pub state: String,
    pub payment: f64,
    pub tau_hat: f64,
    pub se: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Whether this row enters the aggregates under the active filter.
    pub included: bool,
    /// (tau_hat / 10) * payment.
    pub claim_delta: f64,
    /// claim_delta * unit_cost.
    pub cost_delta: f64,
}

/// Aggregate over one regional key value (sums over included rows only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionAggregate {
    pub key: String,
    pub n_units: usize,
    pub total_payments: f64,
    pub total_claim_delta: f64,
    pub total_cost_delta: f64,
    pub total_actual_cost: f64,
    /// 100 * cost delta / (actual cost - cost delta).
    pub percent_of_counterfactual: f64,
    /// Cost delta divided by the summed beneficiary counts, when a
    /// beneficiary column was supplied.
    pub per_patient_cost_delta: Option<f64>,
}

/// Key used for regional aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationKey {
    State,
    Region,
}

impl AggregationKey {
    fn of(&self, row: &PolicyUnitRow) -> String {
        match self {
            AggregationKey::State => row.state.clone(),
            AggregationKey::Region => row.region.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyReport {
    pub rows: Vec<PolicyUnitRow>,
    pub aggregates: Vec<RegionAggregate>,
    pub significant_only: bool,
    pub unit_cost: f64,
    pub total_payments: f64,
    pub total_claim_delta: f64,
    pub total_cost_delta: f64,
    pub total_actual_cost: f64,
    /// total cost delta / total payments (all payments, not only included
    /// rows).
    pub per_dollar_multiplier: f64,
    pub percent_of_counterfactual: f64,
}

fn build_report(
    ds: &PanelDataset,
    payments: &[f64],
    capes: &CapeSet,
    params: &CostParams,
    significant_only: bool,
    agg_key: AggregationKey,
    beneficiaries: Option<&[f64]>,
) -> Result<PolicyReport> {
    if capes.len() != ds.len() || payments.len() != ds.len() {
        return Err(Error::InvalidInput("policy report: input shapes must match dataset".into()));
    }
    if let Some(b) = beneficiaries {
        if b.len() != ds.len() {
            return Err(Error::InvalidInput("policy report: beneficiary counts mismatch".into()));
        }
    }
    let mut rows = Vec::with_capacity(ds.len());
    for ((obs, cape), &payment) in ds.rows().iter().zip(&capes.rows).zip(payments) {
        let included = !significant_only || (cape.significant && cape.tau_hat > 0.0);
        let claim_delta = cape.tau_hat / EFFECT_SCALE_DOLLARS * payment;
        let cost_delta = claim_delta * params.unit_cost;
        rows.push(PolicyUnitRow {
            unit_id: obs.unit_id.clone(),
            year: obs.year,
            region: obs.region.clone(),
            state: obs.state.clone(),
            payment,
            tau_hat: cape.tau_hat,
            se: cape.se,
            p_value: cape.p_value,
            significant: cape.significant,
            included,
            claim_delta,
            cost_delta,
        });
    }

    let mut keys: Vec<String> = rows.iter().map(|r| agg_key.of(r)).collect();
    keys.sort();
    keys.dedup();
    let mut aggregates = Vec::with_capacity(keys.len());
    for key in keys {
        let mut agg = RegionAggregate {
            key: key.clone(),
            n_units: 0,
            total_payments: 0.0,
            total_claim_delta: 0.0,
            total_cost_delta: 0.0,
            total_actual_cost: 0.0,
            percent_of_counterfactual: 0.0,
            per_patient_cost_delta: None,
        };
        let mut total_beneficiaries = 0.0;
        for (i, (row, obs)) in rows.iter().zip(ds.rows()).enumerate() {
            if agg_key.of(row) != key {
                continue;
            }
            agg.n_units += 1;
            agg.total_payments += row.payment;
            agg.total_actual_cost += obs.outcome_cost;
            if let Some(b) = beneficiaries {
                total_beneficiaries += b[i];
            }
            if row.included {
                agg.total_claim_delta += row.claim_delta;
                agg.total_cost_delta += row.cost_delta;
            }
        }
        let base = agg.total_actual_cost - agg.total_cost_delta;
        agg.percent_of_counterfactual =
            if base > 0.0 { 100.0 * agg.total_cost_delta / base } else { f64::NAN };
        if beneficiaries.is_some() && total_beneficiaries > 0.0 {
            agg.per_patient_cost_delta = Some(agg.total_cost_delta / total_beneficiaries);
        }
        aggregates.push(agg);
    }

    let total_payments: f64 = rows.iter().map(|r| r.payment).sum();
    let total_claim_delta: f64 =
        rows.iter().filter(|r| r.included).map(|r| r.claim_delta).sum();
    let total_cost_delta: f64 =
        rows.iter().filter(|r| r.included).map(|r| r.cost_delta).sum();
    let total_actual_cost: f64 = ds.rows().iter().map(|o| o.outcome_cost).sum();
    let base = total_actual_cost - total_cost_delta;
    Ok(PolicyReport {
        rows,
        aggregates,
        significant_only,
        unit_cost: params.unit_cost,
        total_payments,
        total_claim_delta,
        total_cost_delta,
        total_actual_cost,
        per_dollar_multiplier: if total_payments > 0.0 {
            total_cost_delta / total_payments
        } else {
            0.0
        },
        percent_of_counterfactual: if base > 0.0 {
            100.0 * total_cost_delta / base
        } else {
            f64::NAN
        },
    })
}

/// Cost of observed payments: per-unit claim and cost deltas from the
/// estimated effects, aggregated regionally. With `significant_only` (the
/// default posture) only units with a positive significant effect enter the
/// aggregates.
pub fn cost_of_payments(
    capes: &CapeSet,
    ds: &PanelDataset,
    params: &CostParams,
    significant_only: bool,
    agg_key: AggregationKey,
) -> Result<PolicyReport> {
    let payments = ds.column_values("treatment")?;
    build_report(ds, &payments, capes, params, significant_only, agg_key)
}

/// Imputes counterfactual payments for a banned region by matching each
/// banned unit to the reference unit with the nearest predicted propensity
/// (ties: smallest absolute payment, then smallest unit id) and inheriting
/// that unit's observed payment.
pub fn impute_ban_payments(
    banned_ds: &PanelDataset,
    reference_ds: &PanelDataset,
    propensity_model: &ForestModel,
    treated_donors_only: bool,
) -> Result<Vec<f64>> {
    if reference_ds.is_empty() {
        return Err(Error::EmptyReference);
    }
    let banned_scores =
        forest::predict_regression(propensity_model, &banned_ds.covariate_matrix())?;
    let reference_scores =
        forest::predict_regression(propensity_model, &reference_ds.covariate_matrix())?;

    let mut donors: Vec<(f64, f64, String)> = Vec::new(); // (score, payment, id)
    for (obs, &score) in reference_ds.rows().iter().zip(&reference_scores) {
        if treated_donors_only && obs.treatment <= 0.0 {
            continue;
        }
        donors.push((score, obs.treatment, obs.unit_id.clone()));
    }
    if donors.is_empty() {
        return Err(Error::EmptyReference);
    }
    donors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.2.cmp(&b.2)));

    // Collapse equal-score runs to their tie-break winner so each candidate
    // comparison is O(1).
    let mut best_in_run: Vec<usize> = Vec::with_capacity(donors.len());
    {
        let scores: Vec<f64> = donors.iter().map(|d| d.0).collect();
        let payments: Vec<f64> = donors.iter().map(|d| d.1).collect();
        let ids: Vec<String> = donors.iter().map(|d| d.2.clone()).collect();
        let mut i = 0usize;
        while i < donors.len() {
            let mut j = i + 1;
            let mut best = i;
            while j < donors.len() && donors[j].0 == donors[i].0 {
                if better_match(donors[i].0, &scores, &payments, &ids, j, best) {
                    best = j;
                }
                j += 1;
            }
            for _ in i..j {
                best_in_run.push(best);
            }
            i = j;
        }
    }

    let imputed = banned_scores
        .iter()
        .map(|&s| {
            let idx = donors.partition_point(|d| d.0 < s);
            let left = idx.checked_sub(1).map(|i| best_in_run[i]);
            let right = if idx < donors.len() { Some(best_in_run[idx]) } else { None };
            let chosen = match (left, right) {
                (Some(l), Some(r)) => {
                    let dl = (donors[l].0 - s).abs();
                    let dr = (donors[r].0 - s).abs();
                    if dl < dr {
                        l
                    } else if dr < dl {
                        r
                    } else {
                        // Equal distance: apply the payment/id tie-break
                        // across the two runs.
                        let pl = donors[l].1.abs();
                        let pr = donors[r].1.abs();
                        if pl != pr {
                            if pl < pr { l } else { r }
                        } else if donors[l].2 <= donors[r].2 {
                            l
                        } else {
                            r
                        }
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => unreachable!("donors verified non-empty"),
            };
            donors[chosen].1
        })
        .collect();
    Ok(imputed)
}

/// Training-side vectors of a fitted causal forest, needed to evaluate its
/// weights at new points.
#[derive(Debug, Clone, Copy)]
pub struct ForestTrainingRefs<'a> {
    pub y: &'a [f64],
    pub p: &'a [f64],
    pub y_hat: &'a [f64],
    pub p_hat: &'a [f64],
}

/// Predicted savings from a payment ban: effects for banned units are
/// predicted with the reference-region causal forest and applied to the
/// imputed payments.
pub fn ban_savings(
    banned_ds: &PanelDataset,
    imputed_payments: &[f64],
    causal_forest: &ForestModel,
    training: &ForestTrainingRefs,
    params: &CostParams,
    significant_only: bool,
    agg_key: AggregationKey,
) -> Result<PolicyReport> {
    if imputed_payments.len() != banned_ds.len() {
        return Err(Error::InvalidInput("ban_savings: imputed payments mismatch".into()));
    }
    let labels: Vec<(String, i32)> =
        banned_ds.rows().iter().map(|o| (o.unit_id.clone(), o.year)).collect();
    let capes = forest::predict_cape(
        causal_forest,
        &banned_ds.covariate_matrix(),
        &labels,
        training.y,
        training.p,
        training.y_hat,
        training.p_hat,
    )?;
    build_report(banned_ds, imputed_payments, &capes, params, significant_only, agg_key)
}

impl PolicyReport {
    /// Unit-level CSV export.
    pub fn rows_to_csv_string(&self) -> String {
        let mut out = String::from(
            "unit_id,year,region,state,payment,tau_hat,se,p_value,significant,included,claim_delta,cost_delta\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{:.6}\n",
                r.unit_id,
                r.year,
                r.region,
                r.state,
                r.payment,
                r.tau_hat,
                r.se,
                r.p_value,
                r.significant,
                r.included,
                r.claim_delta,
                r.cost_delta
            ));
        }
        out
    }

    /// Plain-text summary with regional aggregates.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "significant_only:        {}\nunit_cost:               {:.4}\n\
             total_payments:          {:.2}\ntotal_claim_delta:       {:.4}\n\
             total_cost_delta:        {:.2}\ntotal_actual_cost:       {:.2}\n\
             per_dollar_multiplier:   {:.4}\npercent_of_counterfactual: {:.4}\n\n",
            self.significant_only,
            self.unit_cost,
            self.total_payments,
            self.total_claim_delta,
            self.total_cost_delta,
            self.total_actual_cost,
            self.per_dollar_multiplier,
            self.percent_of_counterfactual
        ));
        out.push_str("key,n_units,total_payments,total_claim_delta,total_cost_delta,total_actual_cost,percent_of_counterfactual\n");
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{:.2},{:.4},{:.2},{:.2},{:.4}\n",
                a.key,
                a.n_units,
                a.total_payments,
                a.total_claim_delta,
                a.total_cost_delta,
                a.total_actual_cost,
                a.percent_of_counterfactual
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{CapeRow, ForestConfig};
    use crate::panel::{CovariateKind, CovariateSchema, Observation, PanelDataset};
    use crate::synth::{generate, oracle_nn_match, DgpSpec, Preset};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cape_rows(taus: &[f64], significant: &[bool]) -> CapeSet {
        let rows = taus
            .iter()
            .zip(significant)
            .enumerate()
            .map(|(i, (&tau_hat, &sig))| CapeRow {
                unit_id: format!("u{}", i),
                year: 2014,
                tau_hat,
                se: 0.1,
                p_value: if sig { 0.01 } else { 0.5 },
                significant: sig,
            })
            .collect();
        CapeSet { rows }
    }

    fn simple_panel(payments: &[f64], outcomes: &[f64], costs: &[f64]) -> PanelDataset {
        let schema = CovariateSchema {
            columns: vec![("x1".into(), CovariateKind::Continuous)],
        };
        let rows: Vec<Observation> = payments
            .iter()
            .zip(outcomes)
            .zip(costs)
            .enumerate()
            .map(|(i, ((&p, &y), &c))| Observation {
                unit_id: format!("u{}", i),
                year: 2014,
                region: format!("r{}", i % 2),
                state: if i % 2 == 0 { "A".into() } else { "B".into() },
                outcome: y,
                outcome_cost: c,
                treatment: p,
                covariates: vec![i as f64],
            })
            .collect();
        PanelDataset::new(rows, schema).unwrap()
    }

    #[test]
    fn unit_cost_ratio_and_errors() {
        let ds = simple_panel(&[1.0, 1.0], &[1.0, 3.0], &[100.0, 300.0]);
        assert_relative_eq!(unit_cost(&ds, CostSample::All).unwrap(), 100.0);

        // Treated-sample means 153 claims / 78250.01 dollars per unit.
        let ds = simple_panel(&[5.0, 0.0], &[153.0, 10.0], &[78250.01, 50.0]);
        let c = unit_cost(&ds, CostSample::Treated).unwrap();
        assert!((c - 511.4).abs() < 0.1, "c = {}", c);

        // Doubling costs doubles c.
        let ds2 = simple_panel(&[5.0, 0.0], &[153.0, 10.0], &[2.0 * 78250.01, 100.0]);
        assert_relative_eq!(
            unit_cost(&ds2, CostSample::Treated).unwrap(),
            2.0 * c,
            epsilon = 1e-9
        );

        let ds = simple_panel(&[1.0], &[0.0], &[10.0]);
        assert!(matches!(unit_cost(&ds, CostSample::All), Err(Error::ZeroClaims)));
    }

    #[test]
    fn cost_of_payments_formula_and_aggregation() {
        // tau = 0.8 per $10, p = $100, c = $500 -> 8 claims, $4000.
        let ds = simple_panel(&[100.0, 0.0], &[10.0, 10.0], &[9000.0, 5000.0]);
        let capes = cape_rows(&[0.8, 0.8], &[true, true]);
        let params = CostParams::new(500.0).unwrap();
        let report =
            cost_of_payments(&capes, &ds, &params, true, AggregationKey::State).unwrap();
        assert_relative_eq!(report.rows[0].claim_delta, 8.0, epsilon = 1e-12);
        assert_relative_eq!(report.rows[0].cost_delta, 4000.0, epsilon = 1e-12);
        // Zero payment -> zero deltas.
        assert_eq!(report.rows[1].claim_delta, 0.0);

        // Aggregates equal sums of their unit rows exactly.
        let by_state: f64 = report.aggregates.iter().map(|a| a.total_cost_delta).sum();
        assert_eq!(by_state, report.total_cost_delta);

        // Linear in c.
        let params2 = CostParams::new(1000.0).unwrap();
        let report2 =
            cost_of_payments(&capes, &ds, &params2, true, AggregationKey::State).unwrap();
        assert_relative_eq!(report2.total_cost_delta, 2.0 * report.total_cost_delta);

        // All payments zero -> all deltas zero.
        let ds0 = simple_panel(&[0.0, 0.0], &[10.0, 10.0], &[100.0, 100.0]);
        let report0 =
            cost_of_payments(&capes, &ds0, &params, true, AggregationKey::State).unwrap();
        assert_eq!(report0.total_cost_delta, 0.0);
        assert_eq!(report0.per_dollar_multiplier, 0.0);
    }

    #[test]
    fn multiplier_reproduces_headline_totals() {
        // One treated unit constructed so total cost delta = 820,094 over
        // payments of 27,239 -> multiplier about 30.1.
        let payments = 27_239.0;
        let c = 500.0;
        let tau = 820_094.0 * EFFECT_SCALE_DOLLARS / (payments * c);
        let ds = simple_panel(&[payments], &[100.0], &[5_000_000.0]);
        let capes = cape_rows(&[tau], &[true]);
        let report = cost_of_payments(
            &capes,
            &ds,
            &CostParams::new(c).unwrap(),
            true,
            AggregationKey::State,
        )
        .unwrap();
        assert!((report.per_dollar_multiplier - 30.1).abs() < 0.1);
    }

    #[test]
    fn significant_only_filter_is_monotone() {
        let ds = simple_panel(&[50.0, 60.0, 70.0], &[1.0; 3], &[100.0; 3]);
        let capes = cape_rows(&[0.5, 0.4, 0.3], &[true, false, true]);
        let params = CostParams::new(100.0).unwrap();
        let on = cost_of_payments(&capes, &ds, &params, true, AggregationKey::Region).unwrap();
        let off = cost_of_payments(&capes, &ds, &params, false, AggregationKey::Region).unwrap();
        assert!(off.total_cost_delta >= on.total_cost_delta);
        // Row-level formulas are unchanged by the filter.
        for (a, b) in on.rows.iter().zip(&off.rows) {
            assert_eq!(a.claim_delta, b.claim_delta);
        }
    }

    fn propensity_forest(ds: &PanelDataset, seed: u64) -> ForestModel {
        let x = ds.covariate_matrix();
        let flags: Vec<f64> =
            ds.rows().iter().map(|o| f64::from(o.treatment > 0.0)).collect();
        let mut cfg = ForestConfig::default_for(x.ncols()).with_seed(seed);
        cfg.num_trees = 150;
        crate::forest::fit_regression_forest(&x, &flags, &cfg).unwrap()
    }

    #[test]
    fn imputation_matches_oracle_and_handles_edges() {
        let (reference, _) = generate(&DgpSpec::new(Preset::Const, 500, 1, 21)).unwrap();
        let model = propensity_forest(&reference, 3);

        // Banned units cloned from reference rows inherit those payments.
        let clone_idx: Vec<usize> = (0..40).map(|i| i * 7).collect();
        let banned = reference.subset(&clone_idx);
        let imputed = impute_ban_payments(&banned, &reference, &model, false).unwrap();
        for (k, &i) in clone_idx.iter().enumerate() {
            assert_eq!(imputed[k], reference.rows()[i].treatment, "clone {} mismatched", k);
        }

        // Production matcher agrees with the O(n^2) oracle.
        let banned2 = reference.subset(&(250..500).collect::<Vec<_>>());
        let reference2 = reference.subset(&(0..250).collect::<Vec<_>>());
        let model2 = propensity_forest(&reference2, 4);
        let imputed2 = impute_ban_payments(&banned2, &reference2, &model2, false).unwrap();

        let banned_scores =
            crate::forest::predict_regression(&model2, &banned2.covariate_matrix()).unwrap();
        let donor_scores =
            crate::forest::predict_regression(&model2, &reference2.covariate_matrix()).unwrap();
        let donor_payments: Vec<f64> =
            reference2.rows().iter().map(|o| o.treatment).collect();
        let donor_ids: Vec<String> =
            reference2.rows().iter().map(|o| o.unit_id.clone()).collect();
        let matches = oracle_nn_match(&banned_scores, &donor_scores, &donor_payments, &donor_ids);
        for (k, &j) in matches.iter().enumerate() {
            assert_eq!(imputed2[k], donor_payments[j], "row {}", k);
        }

        // Matching is invariant to permuting the reference rows.
        let mut perm: Vec<usize> = (0..reference2.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let reference_shuffled = reference2.subset(&perm);
        let imputed_shuffled =
            impute_ban_payments(&banned2, &reference_shuffled, &model2, false).unwrap();
        assert_eq!(imputed2, imputed_shuffled);

        // All-untreated reference imputes zero everywhere.
        let untreated_idx: Vec<usize> = (0..reference.len())
            .filter(|&i| reference.rows()[i].treatment == 0.0)
            .collect();
        let untreated_ref = reference.subset(&untreated_idx);
        let model3 = propensity_forest(&untreated_ref, 5);
        let imputed3 = impute_ban_payments(&banned, &untreated_ref, &model3, false).unwrap();
        assert!(imputed3.iter().all(|&p| p == 0.0));

        // Treated-only donor mode with no treated donors errors.
        assert!(matches!(
            impute_ban_payments(&banned, &untreated_ref, &model3, true),
            Err(Error::EmptyReference)
        ));
    }

    #[test]
    fn ban_savings_zero_imputed_and_filter_monotonicity() {
        let (reference, truth) = generate(&DgpSpec::new(Preset::Const, 600, 1, 22)).unwrap();
        let x = reference.covariate_matrix();
        let y = reference.column_values("outcome").unwrap();
        let p = reference.column_values("treatment").unwrap();
        // True nuisances from the generator.
        let y_hat: Vec<f64> = (0..reference.len())
            .map(|i| truth.mu[i] + truth.tau[i] / 10.0 * truth.expected_payment[i])
            .collect();
        let p_hat = truth.expected_payment.clone();
        let mut cfg = ForestConfig::default_for(x.ncols()).with_seed(31);
        cfg.num_trees = 300;
        let model = crate::forest::fit_causal_forest(&x, &y, &p, &y_hat, &p_hat, &cfg).unwrap();
        let training = ForestTrainingRefs { y: &y, p: &p, y_hat: &y_hat, p_hat: &p_hat };
        let params = CostParams::new(500.0).unwrap();

        let banned = reference.subset(&(0..200).collect::<Vec<_>>());
        let zeros = vec![0.0; banned.len()];
        let report =
            ban_savings(&banned, &zeros, &model, &training, &params, true, AggregationKey::State)
                .unwrap();
        assert_eq!(report.total_cost_delta, 0.0);

        let imputed: Vec<f64> = (0..banned.len()).map(|i| 10.0 + (i % 5) as f64).collect();
        let on =
            ban_savings(&banned, &imputed, &model, &training, &params, true, AggregationKey::State)
                .unwrap();
        let off = ban_savings(
            &banned,
            &imputed,
            &model,
            &training,
            &params,
            false,
            AggregationKey::State,
        )
        .unwrap();
        assert!(off.total_cost_delta >= on.total_cost_delta);
    }

    #[test]
    fn ban_savings_tracks_oracle_on_const_preset() {
        // Banned cohort drawn from the same DGP as the reference; with true
        // nuisances the predicted savings land near the oracle total
        // sum(tau * p * c / 10).
        let (reference, truth) = generate(&DgpSpec::new(Preset::Const, 1000, 1, 23)).unwrap();
        let x = reference.covariate_matrix();
        let y = reference.column_values("outcome").unwrap();
        let p = reference.column_values("treatment").unwrap();
        let y_hat: Vec<f64> = (0..reference.len())
            .map(|i| truth.mu[i] + truth.tau[i] / 10.0 * truth.expected_payment[i])
            .collect();
        let p_hat = truth.expected_payment.clone();
        let mut cfg = ForestConfig::default_for(x.ncols()).with_seed(33);
        cfg.num_trees = 400;
        let model = crate::forest::fit_causal_forest(&x, &y, &p, &y_hat, &p_hat, &cfg).unwrap();
        let training = ForestTrainingRefs { y: &y, p: &p, y_hat: &y_hat, p_hat: &p_hat };
        let c = 500.0;
        let params = CostParams::new(c).unwrap();

        let (banned, banned_truth) = generate(&DgpSpec::new(Preset::Const, 1000, 1, 24)).unwrap();
        let imputed = banned.column_values("treatment").unwrap();
        let report = ban_savings(
            &banned,
            &imputed,
            &model,
            &training,
            &params,
            false,
            AggregationKey::State,
        )
        .unwrap();

        let oracle: f64 = (0..banned.len())
            .map(|i| banned_truth.tau[i] / 10.0 * imputed[i] * c)
            .sum();
        let rel = (report.total_cost_delta - oracle).abs() / oracle;
        assert!(rel < 0.15, "savings {} vs oracle {} ({:.1}% off)",
            report.total_cost_delta, oracle, 100.0 * rel);
    }
}
