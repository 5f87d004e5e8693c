//! On-disk TOML documents shared between commands.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::{CliError, CliResult};
use greco_core::comm_model::TimingModel;
use greco_core::Error;

/// A computed per-layer compression assignment. Serialization is the
/// file format: reading a plan document and serializing it again
/// reproduces the file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDoc {
    pub manifest_digest: String,
    pub window_id: u64,
    pub budget_steps: u32,
    pub seed: u64,
    pub total_bits: u64,
    pub uncompressed_bits: u64,
    pub compression_ratio: f64,
    pub total_disc_error: u64,
    pub total_raw_error: f64,
    pub objective_value: f64,
    pub layers: Vec<PlanLayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLayerDoc {
    pub name: String,
    pub shape: Vec<usize>,
    pub default: String,
    pub param: String,
    pub bits: u64,
}

/// A fitted per-bucket sync-time model. Hand-written files may omit
/// the digest and fit score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModelDoc {
    #[serde(default)]
    pub manifest_digest: String,
    pub coefficients: Vec<f64>,
    pub intercept_s: f64,
    #[serde(default)]
    pub fit_score: f64,
}

impl TimingModelDoc {
    pub fn from_model(model: &TimingModel, manifest_digest: String) -> Self {
        Self {
            manifest_digest,
            coefficients: model.coefficients.clone(),
            intercept_s: model.intercept_s,
            fit_score: model.fit_score,
        }
    }
}

/// Every plan a simulation applied, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanHistoryDoc {
    pub manifest_digest: String,
    pub layer_names: Vec<String>,
    pub events: Vec<PlanEventDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEventDoc {
    pub applied_from_step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_window: Option<u64>,
    pub assignment: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression_ratio: Option<f64>,
}

/// End-of-run scalars. The `*_s` fields are wall-clock measurements
/// and vary between runs; everything else is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDoc {
    pub manifest_digest: String,
    pub final_loss: f64,
    pub replans: u32,
    pub wall_s: f64,
    pub table_s: f64,
    pub plan_s: f64,
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::InvalidParameter(format!("{}: {e}", path.display())))
    })?;
    toml::from_str(&text).map_err(|e| {
        CliError::Core(Error::InvalidParameter(format!("{}: {e}", path.display())))
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = toml::to_string(value).map_err(|e| {
        CliError::Core(Error::InvalidParameter(format!("{}: {e}", path.display())))
    })?;
    std::fs::write(path, text).map_err(|e| CliError::Core(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_plan() -> PlanDoc {
        PlanDoc {
            manifest_digest: "d".into(),
            window_id: 3,
            budget_steps: 10_000,
            seed: 0,
            total_bits: 1_000,
            uncompressed_bits: 32_000,
            compression_ratio: 32.0,
            total_disc_error: 9_000,
            total_raw_error: 0.125,
            objective_value: 1_000.0,
            layers: vec![PlanLayerDoc {
                name: "fc0.weight".into(),
                shape: vec![8, 4],
                default: "sparsify:0.1".into(),
                param: "sparsify:0.05".into(),
                bits: 1_000,
            }],
        }
    }

    #[test]
    fn plan_doc_reserializes_byte_identically() {
        let text = toml::to_string(&sample_plan()).unwrap();
        let back: PlanDoc = toml::from_str(&text).unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }

    #[test]
    fn timing_model_doc_accepts_minimal_files() {
        let doc: TimingModelDoc =
            toml::from_str("coefficients = [1e-9, 1e-9]\nintercept_s = 0.0\n").unwrap();
        assert_eq!(doc.coefficients.len(), 2);
        assert_eq!(doc.fit_score, 0.0);
        assert!(doc.manifest_digest.is_empty());
    }

    #[test]
    fn plan_event_omits_absent_fields() {
        let doc = PlanHistoryDoc {
            manifest_digest: "d".into(),
            layer_names: vec!["a".into()],
            events: vec![PlanEventDoc {
                applied_from_step: 0,
                source_window: None,
                assignment: vec!["lossless".into()],
                total_bits: None,
                compression_ratio: None,
            }],
        };
        let text = toml::to_string(&doc).unwrap();
        assert!(!text.contains("source_window"));
        let back: PlanHistoryDoc = toml::from_str(&text).unwrap();
        assert_eq!(back, doc);
    }
}
