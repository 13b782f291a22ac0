//! Run configuration files. Unknown keys are rejected so typos fail fast.

use serde::{Deserialize, Serialize};

use vptag::synthbench::norm_skew_config;
use vptag::{Averaging, MetricKind, ProviderDescriptor, SynthConfig, TrainConfig};

use crate::CliError;

/// Configuration for `train` (and, for its `eval` section, `eval`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub embeddings: ProviderDescriptor,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Paths to the source-domain episode files.
    pub train: Vec<String>,
    /// Path to the validation-domain episode file.
    pub validation: String,
    /// Optional test-domain path, kept alongside for convenience.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One of: vp, vpb, dot, rproj, cosine, sqeuclid, scaled-dot, dot-bias.
    pub metric: String,
    /// Train a linear head over the embeddings.
    #[serde(default)]
    pub head: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub averaging: Averaging,
}

impl RunConfig {
    pub fn metric(&self) -> Result<MetricKind, CliError> {
        self.model
            .metric
            .parse()
            .map_err(|e| CliError::Config(format!("{e}")))
    }
}

/// Configuration for `synth-bench`. Defaults to the frozen norm-skew
/// experiment over all metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBenchConfig {
    #[serde(default = "norm_skew_config")]
    pub synth: SynthConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "all_metric_names")]
    pub metrics: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn all_metric_names() -> Vec<String> {
    MetricKind::all().iter().map(|m| m.name().into()).collect()
}

fn default_seeds() -> usize {
    5
}

impl Default for SynthBenchConfig {
    fn default() -> Self {
        Self {
            synth: norm_skew_config(),
            train: TrainConfig::default(),
            metrics: all_metric_names(),
            seeds: default_seeds(),
        }
    }
}

impl SynthBenchConfig {
    pub fn metric_kinds(&self) -> Result<Vec<MetricKind>, CliError> {
        self.metrics
            .iter()
            .map(|name| {
                name.parse()
                    .map_err(|e| CliError::Config(format!("{e}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bench_covers_all_metrics_with_frozen_setup() {
        let config = SynthBenchConfig::default();
        assert_eq!(config.metrics.len(), 8);
        assert_eq!(config.metric_kinds().unwrap().len(), 8);
        assert_eq!(config.seeds, 5);
        assert_eq!(config.synth.norm_skew, 10.0);
        assert_eq!(config.synth.shots, 5);
    }

    #[test]
    fn run_config_rejects_unknown_metric() {
        let config: RunConfig = serde_json::from_str(
            r#"{
                "data": {"train": [], "validation": "v"},
                "embeddings": {"kind": "hashed", "dim": 4, "seed": 0},
                "model": {"metric": "euclidean"}
            }"#,
        )
        .unwrap();
        assert!(config.metric().is_err());
    }
}
