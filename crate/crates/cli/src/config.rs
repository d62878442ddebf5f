//! Run configuration: a TOML file with sections for input, pipeline knobs,
//! trimming, the stability-bound inputs, policy parameters, synthetic data,
//! and output. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use paneltx_core::ate::OsterInputs;
use paneltx_core::error::{Error, Result};
use paneltx_core::pipeline::PipelineConfig;
use paneltx_core::policy::{AggregationKey, CostSample};
use paneltx_core::synth::{DgpSpec, Preset};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<InputSection>,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub trim: TrimSection,
    pub oster: Option<OsterSection>,
    #[serde(default)]
    pub policy: PolicySection,
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub data: PathBuf,
    pub schema: PathBuf,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub seed: Option<u64>,
    pub fe_keys: Option<Vec<String>>,
    pub cluster_key: Option<String>,
    pub k_folds: Option<usize>,
    pub lasso_lambda: Option<f64>,
    pub lambda_grid_points: Option<usize>,
    pub nuisance_trees: Option<usize>,
    pub aipw_trees: Option<usize>,
    pub causal_trees: Option<usize>,
    pub min_leaf_size: Option<usize>,
    pub mtry: Option<usize>,
    pub imbalance_penalty: Option<f64>,
    pub use_lagged_treatment: Option<bool>,
    pub trim_enabled: Option<bool>,
    pub counterfactual_mean: Option<f64>,
    pub oster_delta: Option<f64>,
    pub oster_r2_max_factor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrimSection {
    pub lower_pct: Option<f64>,
    pub upper_pct: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OsterSection {
    pub beta_short: f64,
    pub r2_short: f64,
    pub beta_ctrl: f64,
    pub r2_ctrl: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub r2_max: Option<f64>,
}

fn default_delta() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub banned_state: Option<String>,
    pub unit_cost: Option<f64>,
    pub cost_sample: Option<String>,
    pub significant_only: Option<bool>,
    pub aggregation: Option<String>,
    pub treated_donors_only: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub preset: String,
    pub n_units: usize,
    #[serde(default = "default_years")]
    pub n_years: usize,
}

fn default_years() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub save_forest: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {:?}: {}", path, e)))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("config: {}", e)))
    }

    pub fn input(&self) -> Result<&InputSection> {
        self.input
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("[input] section required".into()))
    }

    /// Merges the pipeline and trim sections over the defaults; `seed_flag`
    /// (from --seed) wins over the config seed.
    pub fn pipeline_config(&self, seed_flag: Option<u64>) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        let p = &self.pipeline;
        if let Some(v) = p.seed {
            cfg.seed = v;
        }
        if let Some(v) = seed_flag {
            cfg.seed = v;
        }
        if let Some(v) = &p.fe_keys {
            cfg.fe_keys = v.clone();
        }
        if let Some(v) = &p.cluster_key {
            cfg.cluster_key = v.clone();
        }
        if let Some(v) = p.k_folds {
            cfg.k_folds = v;
        }
        cfg.lasso_lambda = p.lasso_lambda.or(cfg.lasso_lambda);
        if let Some(v) = p.lambda_grid_points {
            cfg.lambda_grid_points = v;
        }
        if let Some(v) = p.nuisance_trees {
            cfg.nuisance_trees = v;
        }
        if let Some(v) = p.aipw_trees {
            cfg.aipw_trees = v;
        }
        if let Some(v) = p.causal_trees {
            cfg.causal_trees = v;
        }
        if let Some(v) = p.min_leaf_size {
            cfg.min_leaf_size = v;
        }
        cfg.mtry = p.mtry.or(cfg.mtry);
        if let Some(v) = p.imbalance_penalty {
            cfg.imbalance_penalty = v;
        }
        if let Some(v) = p.use_lagged_treatment {
            cfg.use_lagged_treatment = v;
        }
        if let Some(v) = p.trim_enabled {
            cfg.trim_enabled = v;
        }
        cfg.counterfactual_mean = p.counterfactual_mean.or(cfg.counterfactual_mean);
        if let Some(v) = p.oster_delta {
            cfg.oster_delta = v;
        }
        if let Some(v) = p.oster_r2_max_factor {
            cfg.oster_r2_max_factor = v;
        }
        if let Some(v) = self.trim.lower_pct {
            cfg.trim.lower_pct = v;
        }
        if let Some(v) = self.trim.upper_pct {
            cfg.trim.upper_pct = v;
        }
        cfg
    }

    pub fn oster_inputs(&self) -> Result<OsterInputs> {
        let section = self
            .oster
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("[oster] section required".into()))?;
        Ok(OsterInputs {
            beta_short: section.beta_short,
            r2_short: section.r2_short,
            beta_ctrl: section.beta_ctrl,
            r2_ctrl: section.r2_ctrl,
            delta: section.delta,
            r2_max: section.r2_max.unwrap_or(1.3 * section.r2_ctrl),
        })
    }

    pub fn cost_sample(&self) -> Result<CostSample> {
        match self.policy.cost_sample.as_deref() {
            None | Some("treated") => Ok(CostSample::Treated),
            Some("all") => Ok(CostSample::All),
            Some(other) => Err(Error::InvalidConfig(format!(
                "policy.cost_sample must be 'treated' or 'all', got '{}'",
                other
            ))),
        }
    }

    pub fn aggregation_key(&self) -> Result<AggregationKey> {
        match self.policy.aggregation.as_deref() {
            None | Some("state") => Ok(AggregationKey::State),
            Some("region") => Ok(AggregationKey::Region),
            Some(other) => Err(Error::InvalidConfig(format!(
                "policy.aggregation must be 'state' or 'region', got '{}'",
                other
            ))),
        }
    }

    pub fn dgp_spec(&self, seed: u64) -> Result<DgpSpec> {
        let section = self
            .synth
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("[synth] section required".into()))?;
        let preset = Preset::parse(&section.preset)?;
        Ok(DgpSpec::new(preset, section.n_units, section.n_years, seed))
    }

    /// Output directory: --out wins, then [output].dir, then "./out".
    pub fn out_dir(&self, out_flag: Option<&Path>) -> PathBuf {
        out_flag
            .map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
