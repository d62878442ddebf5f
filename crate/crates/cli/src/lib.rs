//! Batch command surface for the panel treatment-effect pipeline.

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use paneltx_core::error::{Error, Result};
use paneltx_core::hte;
use paneltx_core::nuisance::CrossFitPlan;
use paneltx_core::panel::{PanelDataset, SchemaConfig};
use paneltx_core::pipeline::{self, PipelineConfig};
use paneltx_core::report;
use paneltx_core::synth;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "paneltx", about = "Panel treatment-effect estimation toolkit", version)]
pub struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true, default_value = "paneltx.toml")]
    pub config: PathBuf,
    /// Master seed; overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap; PANELTX_THREADS is honored when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; overrides [output].dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Check the configuration and data headers.
    Validate,
    /// Descriptive statistics split by treated flag.
    Summarize,
    /// Average-effect table (rows a-g) with residuals and propensity
    /// histogram.
    Ate,
    /// Per-unit effects, heterogeneity tables, and importance ranking.
    Cate,
    /// Overlap diagnostics and trimming report.
    Overlap,
    /// Bias-adjusted coefficient bound from the [oster] inputs.
    Oster,
    /// Cost of payments and optional gift-ban counterfactual.
    Policy,
    /// Generate a synthetic dataset from a named preset.
    Synth,
}

/// Configures the global worker pool from --threads or PANELTX_THREADS.
pub fn configure_threads(flag: Option<usize>) {
    let threads = flag.or_else(|| {
        std::env::var("PANELTX_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        // Ignore failure: the pool can only be built once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(&cli.config)?;
    let out_dir = cfg.out_dir(cli.out.as_deref());
    let pipeline_cfg = cfg.pipeline_config(cli.seed);
    match cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::Summarize => cmd_summarize(&cfg, &out_dir),
        Command::Ate => cmd_ate(&cfg, &pipeline_cfg, &out_dir),
        Command::Cate => cmd_cate(&cfg, &pipeline_cfg, &out_dir),
        Command::Overlap => cmd_overlap(&cfg, &pipeline_cfg, &out_dir),
        Command::Oster => cmd_oster(&cfg, &out_dir),
        Command::Policy => cmd_policy(&cfg, &pipeline_cfg, &out_dir),
        Command::Synth => cmd_synth(&cfg, &pipeline_cfg, &out_dir),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<PanelDataset> {
    let input = cfg.input()?;
    let schema = SchemaConfig::load(&input.schema)?;
    PanelDataset::load_csv(&input.data, &schema)
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let treated = ds.treated_flags().iter().filter(|&&t| t).count();
    println!("rows:            {}", ds.len());
    println!("treated rows:    {}", treated);
    println!("control rows:    {}", ds.len() - treated);
    println!("covariates:      {}", ds.schema().len());
    for (name, kind) in &ds.schema().columns {
        println!("  {:<24} {:?}", name, kind);
    }
    println!("schema hash:     {:016x}", ds.schema().hash());
    println!("ok");
    Ok(())
}

fn cmd_summarize(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let table = ds.summarize()?;
    write_file(out_dir, "summary.csv", &table.to_csv_string())?;
    println!("wrote {}", out_dir.join("summary.csv").display());
    Ok(())
}

fn cmd_ate(cfg: &RunConfig, pipeline_cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let suite = pipeline::run_ate_suite(&ds, pipeline_cfg)?;
    for est in &suite.estimates {
        for note in &est.notes {
            eprintln!("note[{}]: {}", est.method.label(), note);
        }
    }
    write_file(out_dir, "table3.csv", &report::table3_csv(&suite))?;
    write_file(out_dir, "table3.txt", &report::table3_text(&suite))?;
    write_file(out_dir, "residuals.csv", &suite.residuals.to_csv_string(&suite.analysis_ds))?;
    write_file(out_dir, "propensity_hist.csv", &suite.overlap.histogram.to_csv_string())?;
    println!("wrote {}", out_dir.join("table3.csv").display());
    Ok(())
}

fn cmd_cate(cfg: &RunConfig, pipeline_cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let suite = pipeline::run_ate_suite(&ds, pipeline_cfg)?;
    let analysis =
        pipeline::run_cate_analysis(&suite.capes, &suite.causal_forest, &suite.analysis_ds)?;
    write_file(out_dir, "cape.csv", &suite.capes.to_csv_string())?;
    write_file(
        out_dir,
        "table4.csv",
        &hte::group_characteristics_csv(&analysis.characteristics),
    )?;
    write_file(out_dir, "table5.csv", &hte::subgroup_table_csv(&analysis.subgroups))?;
    write_file(out_dir, "importance.csv", &report::importance_csv(&analysis.importance))?;
    write_file(out_dir, "cape_hist.csv", &analysis.histogram.to_csv_string())?;
    let sig = analysis.significance;
    write_file(
        out_dir,
        "significance.txt",
        &format!(
            "unit_share:   {:.6}\ndollar_share: {:.6}\nn_significant: {}\n",
            sig.unit_share, sig.dollar_share, sig.n_significant
        ),
    )?;
    if cfg.output.save_forest {
        write_file(out_dir, "forest.json", &suite.causal_forest.to_json())?;
    }
    println!("wrote {}", out_dir.join("cape.csv").display());
    Ok(())
}

fn cmd_overlap(cfg: &RunConfig, pipeline_cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let treated = ds.treated_flags();
    let plan = CrossFitPlan::stratified(&treated, pipeline_cfg.k_folds, pipeline_cfg.seed)?;
    let scores = pipeline::binary_propensity_scores(&ds, &plan, pipeline_cfg)?;
    let report = paneltx_core::overlap::OverlapReport::compute(
        &scores,
        &treated,
        &pipeline_cfg.trim,
        0.10,
        30,
    )?;
    let (kept, dropped) = paneltx_core::overlap::trim(&ds, &scores, &pipeline_cfg.trim)?;
    let mut text = report.to_text();
    text.push_str(&format!("rows:                       {:>8}\n", ds.len()));
    text.push_str(&format!("rows_retained:              {:>8}\n", kept.len()));
    text.push_str(&format!("rows_trimmed:               {:>8}\n", dropped.len()));
    write_file(out_dir, "overlap.txt", &text)?;
    write_file(out_dir, "overlap_hist.csv", &report.histogram.to_csv_string())?;
    println!("wrote {}", out_dir.join("overlap.txt").display());
    Ok(())
}

fn cmd_oster(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let inputs = cfg.oster_inputs()?;
    let beta_star = paneltx_core::ate::oster_bound(&inputs)?;
    let delta_star = paneltx_core::ate::oster_delta_to_zero(&inputs)?;
    let text = format!(
        "beta_short: {:.6}\nr2_short:   {:.6}\nbeta_ctrl:  {:.6}\nr2_ctrl:    {:.6}\n\
         delta:      {:.6}\nr2_max:     {:.6}\nbeta_star:  {:.6}\ndelta_to_zero: {:.6}\n",
        inputs.beta_short,
        inputs.r2_short,
        inputs.beta_ctrl,
        inputs.r2_ctrl,
        inputs.delta,
        inputs.r2_max,
        beta_star,
        delta_star
    );
    write_file(out_dir, "oster.txt", &text)?;
    print!("{}", text);
    Ok(())
}

fn cmd_policy(cfg: &RunConfig, pipeline_cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let analysis = pipeline::run_policy(
        &ds,
        pipeline_cfg,
        cfg.policy.banned_state.as_deref(),
        cfg.policy.unit_cost,
        cfg.cost_sample()?,
        cfg.policy.significant_only.unwrap_or(true),
        cfg.aggregation_key()?,
        cfg.policy.treated_donors_only.unwrap_or(false),
    )?;
    write_file(out_dir, "policy_units.csv", &analysis.cost_report.rows_to_csv_string())?;
    write_file(out_dir, "policy_summary.txt", &analysis.cost_report.to_text())?;
    if let (Some(ban), Some(imputed)) = (&analysis.ban_report, &analysis.imputed_payments) {
        write_file(out_dir, "ban_units.csv", &ban.rows_to_csv_string())?;
        write_file(out_dir, "ban_summary.txt", &ban.to_text())?;
        let mut csv = String::from("row,imputed_payment\n");
        for (i, p) in imputed.iter().enumerate() {
            csv.push_str(&format!("{},{:.6}\n", i, p));
        }
        write_file(out_dir, "imputed_payments.csv", &csv)?;
    }
    println!("wrote {}", out_dir.join("policy_summary.txt").display());
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, pipeline_cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let spec = cfg.dgp_spec(pipeline_cfg.seed)?;
    let (ds, truth) = synth::generate(&spec)?;
    std::fs::create_dir_all(out_dir)?;
    ds.write_csv(&out_dir.join("data.csv"))?;
    let schema = ds.canonical_schema_config();
    let schema_text = toml::to_string_pretty(&schema)
        .map_err(|e| Error::InvalidConfig(format!("schema serialization: {}", e)))?;
    write_file(out_dir, "schema.toml", &schema_text)?;
    let mut truth_csv = String::from("unit_id,year,tau,propensity,mu,expected_payment\n");
    for (i, obs) in ds.rows().iter().enumerate() {
        truth_csv.push_str(&format!(
            "{},{},{:.10},{:.10},{:.10},{:.10}\n",
            obs.unit_id, obs.year, truth.tau[i], truth.propensity[i], truth.mu[i],
            truth.expected_payment[i]
        ));
    }
    write_file(out_dir, "truth.csv", &truth_csv)?;
    println!(
        "wrote {} ({} rows, ate {:.4})",
        out_dir.join("data.csv").display(),
        ds.len(),
        truth.ate
    );
    Ok(())
}
