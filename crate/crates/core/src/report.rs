//! CSV and JSON file formats written and read by the command-line tool.

use serde::{Deserialize, Serialize};

use crate::arch::{DenseNetConfig, SearchSpace};
use crate::entropy::StageEntropy;
use crate::error::{Error, Result};
use crate::optimizer::{ObjectiveSpec, SearchParams, TrajectoryRow};
use crate::powerlaw::{fit_compare, fit_power, stage_indices, FamilyFit, FitFamily};

/// One row of the entropy report. `stage_index` is one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub stage_index: usize,
    pub num_layers: u32,
    pub in_width: u32,
    pub growth_rate: u32,
    pub kernel: u32,
    pub entropy_nats: f64,
    pub effectiveness: f64,
}

pub fn entropy_rows(config: &DenseNetConfig, entropies: &[StageEntropy]) -> Vec<EntropyRow> {
    config
        .stages
        .iter()
        .zip(entropies)
        .enumerate()
        .map(|(i, (s, h))| EntropyRow {
            stage_index: i + 1,
            num_layers: s.num_layers,
            in_width: s.in_width,
            growth_rate: s.growth_rate,
            kernel: s.kernel_size,
            entropy_nats: h.value,
            effectiveness: h.effectiveness,
        })
        .collect()
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const ENTROPY_HEADER: [&str; 7] = [
    "stage_index",
    "num_layers",
    "in_width",
    "growth_rate",
    "kernel",
    "entropy_nats",
    "effectiveness",
];

pub fn entropy_csv(rows: &[EntropyRow]) -> Result<String> {
    to_csv(rows, &ENTROPY_HEADER)
}

/// Parses an entropy report. The header is mandatory.
pub fn parse_entropy_csv(text: &str) -> Result<Vec<EntropyRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    for column in ENTROPY_HEADER {
        if !header.iter().any(|h| h == column) {
            return Err(Error::Config(format!("entropy CSV is missing column `{column}`")));
        }
    }
    let rows = reader.deserialize().collect::<std::result::Result<Vec<EntropyRow>, _>>()?;
    Ok(rows)
}

/// One row of the fit report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub family: String,
    pub a_or_coeffs: String,
    pub sse: f64,
    pub r_square: f64,
    pub adjusted_r_square: f64,
    pub rmse: f64,
}

impl From<&FamilyFit> for FitRow {
    fn from(f: &FamilyFit) -> Self {
        Self {
            family: f.family.name().to_string(),
            a_or_coeffs: f
                .coefficients
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(";"),
            sse: f.diagnostics.sse,
            r_square: f.diagnostics.r_square,
            adjusted_r_square: f.diagnostics.adjusted_r_square,
            rmse: f.diagnostics.rmse,
        }
    }
}

pub const FIT_HEADER: [&str; 6] = ["family", "a_or_coeffs", "sse", "r_square", "adjusted_r_square", "rmse"];

pub fn fit_csv(fits: &[FamilyFit]) -> Result<String> {
    let rows: Vec<FitRow> = fits.iter().map(FitRow::from).collect();
    to_csv(&rows, &FIT_HEADER)
}

/// Fits every family the profile supports: all four from four stages up,
/// only the power law for two or three stages, nothing below that.
pub fn fit_profile(values: &[f64]) -> Vec<FamilyFit> {
    let indices = stage_indices(values.len());
    if let Ok(fits) = fit_compare(values, &indices) {
        return fits;
    }
    match fit_power(values, &indices) {
        Ok(p) => vec![FamilyFit {
            family: FitFamily::Power,
            coefficients: vec![p.a, p.b],
            diagnostics: p.diagnostics,
        }],
        Err(_) => Vec::new(),
    }
}

pub const TRAJECTORY_HEADER: [&str; 4] = ["iteration", "best_objective", "population_size", "prunes_applied"];

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> Result<String> {
    to_csv(rows, &TRAJECTORY_HEADER)
}

/// A search run: space, objective, loop settings and the starting structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub space: SearchSpace,
    pub objective: ObjectiveSpec,
    pub search: SearchParams,
    /// Starting structure; DenseNet-BC(121) for 100 classes when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<DenseNetConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut config: Self = serde_json::from_str(text)?;
        config.space.check()?;
        config.objective = config.objective.resolved(config.space.num_stages);
        config.objective.check(config.space.num_stages)?;
        config.search.check()?;
        if let Some(initial) = &config.initial {
            let problems = initial.structural_violations();
            if !problems.is_empty() {
                return Err(Error::Config(format!(
                    "initial: {}",
                    problems.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
                )));
            }
        }
        Ok(config)
    }

    pub fn initial(&self) -> DenseNetConfig {
        self.initial.clone().unwrap_or_else(|| DenseNetConfig::densenet121(100))
    }
}
