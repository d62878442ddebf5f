//! Panel data model: observations keyed by (unit, year), CSV ingestion with
//! validation, fixed-effect demeaning, standardization, and descriptive
//! summaries.
//!
//! A dataset is immutable after construction; all transforms return new
//! datasets so concurrent readers never observe partial state.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

/// Kind of a covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Continuous,
    Binary,
}

/// Ordered covariate schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub columns: Vec<(String, CovariateKind)>,
}

impl CovariateSchema {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|(n, _)| n == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<CovariateKind> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }

    /// FNV-1a fingerprint over names and kinds; detects schema drift between
    /// a fitted model and prediction inputs.
    pub fn hash(&self) -> u64 {
        let mut buf = String::new();
        for (name, kind) in &self.columns {
            let tag = match kind {
                CovariateKind::Continuous => 'c',
                CovariateKind::Binary => 'b',
            };
            let _ = write!(buf, "{}:{};", name, tag);
        }
        stats::fnv1a(buf.as_bytes())
    }
}

/// One unit-year row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub unit_id: String,
    pub year: i32,
    pub region: String,
    pub state: String,
    pub outcome: f64,
    pub outcome_cost: f64,
    pub treatment: f64,
    pub covariates: Vec<f64>,
}

/// Validated panel dataset. Row order is preserved from ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    rows: Vec<Observation>,
    schema: CovariateSchema,
}

/// Names of the fixed-effect grouping columns.
pub const FE_KEYS: [&str; 3] = ["unit", "year", "region"];
/// Name of the clustering column.
pub const CLUSTER_KEY: &str = "unit";

/// Column-role mapping read from a schema config file.
///
/// The file is TOML; every entry maps a role to the CSV column that carries
/// it. Covariates are listed in order under `continuous` and `binary`;
/// columns under `ignore` are skipped. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub unit: String,
    pub year: String,
    pub region: String,
    pub state: String,
    pub outcome: String,
    pub outcome_cost: String,
    pub treatment: String,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub binary: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
}

impl SchemaConfig {
    pub fn from_toml(text: &str) -> Result<SchemaConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("schema config: {}", e)))
    }

    pub fn load(path: &Path) -> Result<SchemaConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// The canonical mapping used when this crate writes datasets itself:
    /// role names double as column names.
    pub fn canonical(continuous: &[String], binary: &[String]) -> SchemaConfig {
        SchemaConfig {
            unit: "unit".into(),
            year: "year".into(),
            region: "region".into(),
            state: "state".into(),
            outcome: "outcome".into(),
            outcome_cost: "outcome_cost".into(),
            treatment: "treatment".into(),
            continuous: continuous.to_vec(),
            binary: binary.to_vec(),
            ignore: vec![],
        }
    }

    fn covariate_schema(&self) -> CovariateSchema {
        let mut columns = Vec::new();
        for c in &self.continuous {
            columns.push((c.clone(), CovariateKind::Continuous));
        }
        for b in &self.binary {
            columns.push((b.clone(), CovariateKind::Binary));
        }
        CovariateSchema { columns }
    }
}

/// Record of a standardization, sufficient for exact inversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRecord {
    /// (column, mean, population sd) per standardized column.
    pub entries: Vec<(String, f64, f64)>,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::NonNumericCell {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        });
    }
    trimmed.parse::<f64>().map_err(|_| Error::NonNumericCell {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Formats a float with 17 significant digits so serialization round-trips
/// bit-exactly.
pub fn format_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

impl PanelDataset {
    pub fn new(rows: Vec<Observation>, schema: CovariateSchema) -> Result<PanelDataset> {
        let ds = PanelDataset { rows, schema };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let mut seen: HashMap<(&str, i32), ()> = HashMap::new();
        for (i, obs) in self.rows.iter().enumerate() {
            if obs.covariates.len() != self.schema.len() {
                return Err(Error::InvalidInput(format!(
                    "row {}: covariate vector length {} != schema length {}",
                    i + 1,
                    obs.covariates.len(),
                    self.schema.len()
                )));
            }
            if obs.treatment < 0.0 {
                return Err(Error::NegativeTreatment { row: i + 1, value: obs.treatment });
            }
            for (j, (name, kind)) in self.schema.columns.iter().enumerate() {
                if *kind == CovariateKind::Binary {
                    let v = obs.covariates[j];
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::InvalidInput(format!(
                            "row {}: binary covariate '{}' has value {}",
                            i + 1,
                            name,
                            v
                        )));
                    }
                }
            }
            if seen.insert((obs.unit_id.as_str(), obs.year), ()).is_some() {
                return Err(Error::DuplicateUnitYear {
                    unit: obs.unit_id.clone(),
                    year: obs.year,
                });
            }
        }
        Ok(())
    }

    /// Reads and validates a CSV file under the given column-role mapping.
    /// Row order is preserved.
    pub fn load_csv(path: &Path, config: &SchemaConfig) -> Result<PanelDataset> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header: Vec<String> =
            reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

        let col = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };

        let unit_idx = col(&config.unit)?;
        let year_idx = col(&config.year)?;
        let region_idx = col(&config.region)?;
        let state_idx = col(&config.state)?;
        let outcome_idx = col(&config.outcome)?;
        let cost_idx = col(&config.outcome_cost)?;
        let treatment_idx = col(&config.treatment)?;
        let mut cov_idx = Vec::new();
        for name in config.continuous.iter().chain(config.binary.iter()) {
            cov_idx.push((name.clone(), col(name)?));
        }

        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row_no = i + 1;
            let field = |idx: usize| record.get(idx).unwrap_or("");

            let year_raw = field(year_idx).trim();
            let year: i32 = year_raw.parse().map_err(|_| Error::NonNumericCell {
                row: row_no,
                column: config.year.clone(),
                value: year_raw.to_string(),
            })?;

            let mut covariates = Vec::with_capacity(cov_idx.len());
            for (name, idx) in &cov_idx {
                covariates.push(parse_cell(field(*idx), row_no, name)?);
            }

            rows.push(Observation {
                unit_id: field(unit_idx).trim().to_string(),
                year,
                region: field(region_idx).trim().to_string(),
                state: field(state_idx).trim().to_string(),
                outcome: parse_cell(field(outcome_idx), row_no, &config.outcome)?,
                outcome_cost: parse_cell(field(cost_idx), row_no, &config.outcome_cost)?,
                treatment: parse_cell(field(treatment_idx), row_no, &config.treatment)?,
                covariates,
            });
        }

        PanelDataset::new(rows, config.covariate_schema())
    }

    /// Writes the dataset in canonical column order with 17-significant-digit
    /// floats; reading it back under the canonical schema reproduces the
    /// dataset exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "unit".to_string(),
            "year".to_string(),
            "region".to_string(),
            "state".to_string(),
            "outcome".to_string(),
            "outcome_cost".to_string(),
            "treatment".to_string(),
        ];
        header.extend(self.schema.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for obs in &self.rows {
            let mut record = vec![
                obs.unit_id.clone(),
                obs.year.to_string(),
                obs.region.clone(),
                obs.state.clone(),
                format_f64(obs.outcome),
                format_f64(obs.outcome_cost),
                format_f64(obs.treatment),
            ];
            record.extend(obs.covariates.iter().map(|v| format_f64(*v)));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn canonical_schema_config(&self) -> SchemaConfig {
        let continuous: Vec<String> = self
            .schema
            .columns
            .iter()
            .filter(|(_, k)| *k == CovariateKind::Continuous)
            .map(|(n, _)| n.clone())
            .collect();
        let binary: Vec<String> = self
            .schema
            .columns
            .iter()
            .filter(|(_, k)| *k == CovariateKind::Binary)
            .map(|(n, _)| n.clone())
            .collect();
        SchemaConfig::canonical(&continuous, &binary)
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    /// Treated flag per row: treatment strictly greater than zero.
    pub fn treated_flags(&self) -> Vec<bool> {
        self.rows.iter().map(|o| o.treatment > 0.0).collect()
    }

    /// Numeric column by name. Role columns are addressed as "outcome",
    /// "outcome_cost" and "treatment"; covariates by schema name.
    pub fn column_values(&self, name: &str) -> Result<Vec<f64>> {
        match name {
            "outcome" => Ok(self.rows.iter().map(|o| o.outcome).collect()),
            "outcome_cost" => Ok(self.rows.iter().map(|o| o.outcome_cost).collect()),
            "treatment" => Ok(self.rows.iter().map(|o| o.treatment).collect()),
            _ => {
                let j = self
                    .schema
                    .index_of(name)
                    .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
                Ok(self.rows.iter().map(|o| o.covariates[j]).collect())
            }
        }
    }

    fn with_column_values(&self, name: &str, values: &[f64]) -> Result<PanelDataset> {
        assert_eq!(values.len(), self.rows.len());
        let mut rows = self.rows.clone();
        match name {
            "outcome" => {
                for (o, v) in rows.iter_mut().zip(values) {
                    o.outcome = *v;
                }
            }
            "outcome_cost" => {
                for (o, v) in rows.iter_mut().zip(values) {
                    o.outcome_cost = *v;
                }
            }
            "treatment" => {
                for (o, v) in rows.iter_mut().zip(values) {
                    o.treatment = *v;
                }
            }
            _ => {
                let j = self
                    .schema
                    .index_of(name)
                    .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
                for (o, v) in rows.iter_mut().zip(values) {
                    o.covariates[j] = *v;
                }
            }
        }
        // Transformed values bypass `new` so demeaned treatments (which can be
        // negative) and recentered binaries remain representable.
        Ok(PanelDataset { rows, schema: self.schema.clone() })
    }

    /// Clone with the outcome column replaced by arbitrary values; used to
    /// push derived vectors (for example treatment residuals) through the
    /// fixed-effect projection.
    pub(crate) fn with_replaced_outcome(&self, values: &[f64]) -> PanelDataset {
        self.with_column_values("outcome", values)
            .expect("outcome column always exists")
    }

    /// Group label per row for a fixed-effect key ("unit", "year", "region").
    pub fn fe_labels(&self, key: &str) -> Result<Vec<String>> {
        match key {
            "unit" => Ok(self.rows.iter().map(|o| o.unit_id.clone()).collect()),
            "year" => Ok(self.rows.iter().map(|o| o.year.to_string()).collect()),
            "region" => Ok(self.rows.iter().map(|o| o.region.clone()).collect()),
            _ => Err(Error::InvalidInput(format!("unknown fixed-effect key '{}'", key))),
        }
    }

    /// Cluster label per row for the clustering column.
    pub fn cluster_labels(&self, key: &str) -> Result<Vec<String>> {
        match key {
            "unit" => Ok(self.rows.iter().map(|o| o.unit_id.clone()).collect()),
            "region" => Ok(self.rows.iter().map(|o| o.region.clone()).collect()),
            "state" => Ok(self.rows.iter().map(|o| o.state.clone()).collect()),
            _ => Err(Error::InvalidInput(format!("unknown cluster key '{}'", key))),
        }
    }

    /// Covariate matrix in schema order, row-major.
    pub fn covariate_matrix(&self) -> Matrix {
        let n = self.rows.len();
        let k = self.schema.len();
        let mut data = Vec::with_capacity(n * k);
        for obs in &self.rows {
            data.extend_from_slice(&obs.covariates);
        }
        Matrix::new(data, n, k)
    }

    /// Most recent prior-year treatment per row (same unit, year - 1), zero
    /// when no prior year exists.
    pub fn lagged_treatment(&self) -> Vec<f64> {
        let mut by_key: HashMap<(&str, i32), f64> = HashMap::new();
        for obs in &self.rows {
            by_key.insert((obs.unit_id.as_str(), obs.year), obs.treatment);
        }
        self.rows
            .iter()
            .map(|o| by_key.get(&(o.unit_id.as_str(), o.year - 1)).copied().unwrap_or(0.0))
            .collect()
    }

    /// New dataset with the selected rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> PanelDataset {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        PanelDataset { rows, schema: self.schema.clone() }
    }

    /// Removes fixed-effect group means from the requested columns by
    /// iterated demeaning over the listed keys. Sweeps until the largest
    /// within-group mean across all keys falls below 1e-10, capped at 100
    /// sweeps.
    pub fn within_transform(&self, keys: &[&str], columns: &[&str]) -> Result<PanelDataset> {
        const TOL: f64 = 1e-10;
        const MAX_SWEEPS: usize = 100;

        if keys.is_empty() {
            return Err(Error::InvalidInput("within_transform: no keys given".into()));
        }
        if self.rows.is_empty() {
            return Err(Error::InvalidInput("within_transform: empty dataset".into()));
        }

        // Indices per group, per key.
        let mut key_groups: Vec<Vec<Vec<usize>>> = Vec::with_capacity(keys.len());
        for key in keys {
            let labels = self.fe_labels(key)?;
            let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, label) in labels.iter().enumerate() {
                map.entry(label.as_str()).or_default().push(i);
            }
            key_groups.push(map.into_values().collect());
        }

        let mut result = self.clone();
        for column in columns {
            let mut values = result.column_values(column)?;
            let mut converged = false;
            for _ in 0..MAX_SWEEPS {
                for groups in &key_groups {
                    for group in groups {
                        let m: f64 =
                            group.iter().map(|&i| values[i]).sum::<f64>() / group.len() as f64;
                        for &i in group {
                            values[i] -= m;
                        }
                    }
                }
                let mut worst: f64 = 0.0;
                for groups in &key_groups {
                    for group in groups {
                        let m: f64 =
                            group.iter().map(|&i| values[i]).sum::<f64>() / group.len() as f64;
                        worst = worst.max(m.abs());
                    }
                }
                if worst < TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoConvergence(format!(
                    "within_transform: column '{}' residual group mean >= {} after {} sweeps",
                    column, TOL, MAX_SWEEPS
                )));
            }
            result = result.with_column_values(column, &values)?;
        }
        Ok(result)
    }

    /// Standardizes continuous columns to mean 0, population sd 1; binary
    /// covariates pass through unchanged. The record allows exact inversion.
    pub fn standardize(&self, columns: &[&str]) -> Result<(PanelDataset, ScalingRecord)> {
        let mut result = self.clone();
        let mut entries = Vec::new();
        for column in columns {
            if self.schema.kind_of(column) == Some(CovariateKind::Binary) {
                continue;
            }
            let values = result.column_values(column)?;
            let m = stats::mean(&values);
            let sd = stats::population_sd(&values);
            if sd <= 0.0 {
                return Err(Error::ZeroVariance(column.to_string()));
            }
            let scaled: Vec<f64> = values.iter().map(|v| (v - m) / sd).collect();
            result = result.with_column_values(column, &scaled)?;
            entries.push((column.to_string(), m, sd));
        }
        Ok((result, ScalingRecord { entries }))
    }

    /// Reverses a standardization produced by [`PanelDataset::standardize`].
    pub fn invert_standardize(&self, record: &ScalingRecord) -> Result<PanelDataset> {
        let mut result = self.clone();
        for (column, m, sd) in &record.entries {
            let values = result.column_values(column)?;
            let raw: Vec<f64> = values.iter().map(|v| v * sd + m).collect();
            result = result.with_column_values(column, &raw)?;
        }
        Ok(result)
    }

    /// Descriptive statistics per column, split by the treated flag.
    pub fn summarize(&self) -> Result<SummaryTable> {
        if self.rows.is_empty() {
            return Err(Error::InvalidInput("summarize: empty dataset".into()));
        }
        let treated = self.treated_flags();
        let mut columns = vec![
            "treatment".to_string(),
            "outcome".to_string(),
            "outcome_cost".to_string(),
        ];
        columns.extend(self.schema.columns.iter().map(|(n, _)| n.clone()));

        let mut rows = Vec::new();
        for column in &columns {
            let values = self.column_values(column)?;
            let treated_vals: Vec<f64> = values
                .iter()
                .zip(&treated)
                .filter(|(_, t)| **t)
                .map(|(v, _)| *v)
                .collect();
            let control_vals: Vec<f64> = values
                .iter()
                .zip(&treated)
                .filter(|(_, t)| !**t)
                .map(|(v, _)| *v)
                .collect();
            rows.push(SummaryRow {
                column: column.clone(),
                treated: ColumnStats::from_values(&treated_vals),
                untreated: ColumnStats::from_values(&control_vals),
            });
        }
        Ok(SummaryTable { rows })
    }
}

/// Per-column descriptive statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl ColumnStats {
    pub fn from_values(values: &[f64]) -> ColumnStats {
        if values.is_empty() {
            return ColumnStats {
                n: 0,
                mean: f64::NAN,
                sd: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                median: f64::NAN,
            };
        }
        ColumnStats {
            n: values.len(),
            mean: stats::mean(values),
            sd: stats::sample_sd(values),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            median: stats::median(values),
        }
    }
}

/// Descriptive summary split by treated flag (treatment > 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub column: String,
    pub treated: ColumnStats,
    pub untreated: ColumnStats,
}

impl SummaryTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "column,group,n,mean,sd,min,max,median\n",
        );
        let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{:.6}", v) };
        for row in &self.rows {
            for (group, s) in [("treated", &row.treated), ("untreated", &row.untreated)] {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    row.column,
                    group,
                    s.n,
                    fmt(s.mean),
                    fmt(s.sd),
                    fmt(s.min),
                    fmt(s.max),
                    fmt(s.median)
                );
            }
        }
        out
    }
}
