//! Plain-text and CSV renderings of the estimator reports.

use std::fmt::Write as _;

use crate::ate::AteMethod;
use crate::pipeline::AteSuiteResult;

const ROW_LABELS: [(&str, &str); 7] = [
    ("a", "APE OLS fixed effects, uncontrolled"),
    ("b", "APE OLS fixed effects, full controls"),
    ("c", "APE residualized regression"),
    ("d", "APE AIPW (doubly robust)"),
    ("e", "APE causal forest (mean CAPE)"),
    ("f", "APE bounded coefficient"),
    ("g", "APE percent of counterfactual"),
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:.6}", x)).unwrap_or_default()
}

/// CSV rows (a)-(g) of the average-effect table.
pub fn table3_csv(suite: &AteSuiteResult) -> String {
    let mut out = String::from("row,method,label,estimate,se,r_squared,n_treated,n_control\n");
    let ordered: Vec<(usize, &str)> = vec![
        (0, "a"),
        (1, "b"),
        (2, "c"),
        (3, "d"),
        (4, "e"),
    ];
    for (idx, row) in ordered {
        let est = &suite.estimates[idx];
        let label = ROW_LABELS.iter().find(|(r, _)| *r == row).unwrap().1;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{},{},{}",
            row,
            est.method.label(),
            label,
            est.alpha_hat,
            fmt_opt(est.se),
            fmt_opt(est.r_squared),
            est.n_treated,
            est.n_control
        );
    }
    let bound = &suite.estimates[2]; // sample sizes carried from row (c)
    let _ = writeln!(
        out,
        "f,{},{},{:.6},,,{},{}",
        AteMethod::OsterBound.label(),
        ROW_LABELS[5].1,
        suite.oster_beta_star,
        bound.n_treated,
        bound.n_control
    );
    let pct = &suite.estimates[5];
    let _ = writeln!(
        out,
        "g,{},{},{:.6},{},,{},{}",
        pct.method.label(),
        ROW_LABELS[6].1,
        pct.alpha_hat,
        fmt_opt(pct.se),
        pct.n_treated,
        pct.n_control
    );
    out
}

/// Aligned plain-text rendering of the average-effect table.
pub fn table3_text(suite: &AteSuiteResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Average payment effect per $10 of treatment");
    let _ = writeln!(out, "{:-<64}", "");
    let print_row = |out: &mut String, tag: &str, label: &str, est: f64, se: Option<f64>| {
        let _ = writeln!(out, "({}) {:<44} {:>10.4}", tag, label, est);
        if let Some(se) = se {
            let _ = writeln!(out, "    {:<44} {:>10}", "", format!("({:.4})", se));
        }
    };
    for (i, tag) in ["a", "b", "c", "d", "e"].iter().enumerate() {
        let est = &suite.estimates[i];
        let label = ROW_LABELS.iter().find(|(r, _)| r == tag).unwrap().1;
        print_row(&mut out, tag, label, est.alpha_hat, est.se);
    }
    print_row(&mut out, "f", ROW_LABELS[5].1, suite.oster_beta_star, None);
    let pct = &suite.estimates[5];
    print_row(&mut out, "g", ROW_LABELS[6].1, pct.alpha_hat, pct.se);
    let _ = writeln!(out, "{:-<64}", "");
    let reference = &suite.estimates[2];
    let _ = writeln!(out, "Treated observations:   {}", reference.n_treated);
    let _ = writeln!(out, "Control observations:   {}", reference.n_control);
    let _ = writeln!(
        out,
        "R-squared:              {:.4} (uncontrolled) / {:.4} (controlled)",
        suite.estimates[0].r_squared.unwrap_or(f64::NAN),
        suite.estimates[1].r_squared.unwrap_or(f64::NAN)
    );
    let _ = writeln!(
        out,
        "Oster inputs:           delta = {:.3}, r2_max = {:.4}",
        suite.oster_inputs.delta, suite.oster_inputs.r2_max
    );
    let _ = writeln!(out, "Delta to zero:          {:.4}", suite.oster_delta_star);
    let _ = writeln!(
        out,
        "Outcome fit corr:       {:.4}",
        suite.residuals.outcome_fit_correlation
    );
    let _ = writeln!(
        out,
        "Mean treated payment:   {:.4}",
        suite.mean_treated_payment
    );
    let _ = writeln!(
        out,
        "Counterfactual mean:    {:.4}",
        suite.counterfactual_mean
    );
    let _ = writeln!(out, "Rows trimmed:           {}", suite.trimmed_rows.len());
    let _ = writeln!(out, "Selected lambda:        {:.6}", suite.residuals.selected_lambda);
    out
}

/// CSV of the covariate importance ranking.
pub fn importance_csv(importance: &[(String, f64)]) -> String {
    let mut out = String::from("rank,variable,share\n");
    for (rank, (name, share)) in importance.iter().enumerate() {
        let _ = writeln!(out, "{},{},{:.8}", rank + 1, name, share);
    }
    out
}
