//! Heterogeneous treatment effect estimation for panel data with a
//! continuous treatment: residualized (double/debiased) regression, AIPW,
//! honest causal forests with per-unit effects, overlap and trimming
//! diagnostics, coefficient-stability bounds, heterogeneity analysis, and
//! counterfactual policy-cost prediction.

pub mod ate;
pub mod error;
pub mod forest;
pub mod hte;
pub mod linalg;
pub mod matrix;
pub mod nuisance;
pub mod overlap;
pub mod panel;
pub mod pipeline;
pub mod policy;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use forest::{CapeRow, CapeSet, ForestConfig, ForestModel};
pub use matrix::Matrix;
pub use panel::{Observation, PanelDataset, SchemaConfig};
