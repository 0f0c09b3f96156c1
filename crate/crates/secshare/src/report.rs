//! Machine-readable run reports. Every field is always present (absent
//! sections serialise as `null`) so reports diff cleanly across runs.

use serde::{Deserialize, Serialize};

use secshare_core::Metrics;

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub party: usize,
    pub seed: String,
    pub config_hash: String,
    pub config: RunConfig,
    /// Time spent fetching or generating correlations, and everything else.
    pub offline_seconds: f64,
    pub online_seconds: f64,
    /// This party's transport counters for the command's work proper.
    pub metrics: Metrics,
    pub train: Option<TrainReport>,
    pub inference: Option<InferenceReport>,
    pub bench: Option<BenchReport>,
    pub dealer: Option<DealerReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub network: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: Vec<EpochReport>,
    /// Traffic of the per-epoch model openings used for evaluation, kept
    /// out of `metrics`.
    pub evaluation_metrics: Metrics,
    /// SHA-256 of the opened final weights in fixed point.
    pub weights_digest: String,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub network: String,
    pub labels: Vec<usize>,
    pub queries: usize,
    pub online_rounds_per_query: f64,
    /// Payload bytes this party sent plus received, per query.
    pub online_bytes_per_query: f64,
    pub seconds_per_query: f64,
    /// Every query moved exactly the same number of bytes.
    pub bytes_stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: String,
    pub n: usize,
    pub rounds_per_op: f64,
    pub bytes_per_op: f64,
    pub seconds_per_op: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DealerReport {
    pub files: Vec<String>,
    pub triples: usize,
    pub prime_triples: usize,
    pub masks: usize,
    pub mat_triples: usize,
}

impl RunReport {
    pub fn new(command: &str, party: usize, cfg: &RunConfig) -> Self {
        RunReport {
            command: command.into(),
            party,
            seed: format!("{:016x}", cfg.seed),
            config_hash: cfg.hash_hex(),
            config: cfg.clone(),
            offline_seconds: 0.0,
            online_seconds: 0.0,
            metrics: Metrics::default(),
            train: None,
            inference: None,
            bench: None,
            dealer: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
