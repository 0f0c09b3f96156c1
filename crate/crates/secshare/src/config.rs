//! Run configuration shared by both parties, and the hash handshake that
//! makes sure they loaded the same one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use secshare_core::nn::{NetworkSpec, TrainConfig};
use secshare_core::preprocessing::PoolPlan;
use secshare_core::transport::{Link, Session};
use secshare_core::CompareRing;

use crate::error::{AppError, AppResult};
use crate::formats;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `A`, `B`, `C` or `D`.
    pub network: String,
    /// Master seed; every other seed is derived from it.
    #[serde(with = "hex_u64")]
    pub seed: u64,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default)]
    pub providers: Providers,
    #[serde(default)]
    pub pools: PoolCounts,
    #[serde(default)]
    pub infer: InferSection,
    /// Optional JSON file with a piecewise-linear exponential table;
    /// otherwise the table is built from `train.exp_segments`.
    #[serde(default)]
    pub exp_table: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Learning rate `2^-lr_log2`; the network's default when absent.
    pub lr_log2: Option<u32>,
    pub batch: usize,
    pub epochs: usize,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub exp_segments: usize,
    /// Optional checkpoint file stem; each party writes `<stem>.p<i>.2pck`.
    pub checkpoint: Option<PathBuf>,
    /// Full dataset and 15 epochs regardless of the limits above.
    pub full_run: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr_log2: None,
            batch: 128,
            epochs: 1,
            train_limit: Some(1000),
            test_limit: Some(1000),
            exp_segments: 16,
            checkpoint: None,
            full_run: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Mem,
    Tcp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    pub kind: TransportKind,
    /// Party 0 listens here, party 1 connects.
    pub address: String,
}

impl Default for TransportSection {
    fn default() -> Self {
        TransportSection { kind: TransportKind::Mem, address: "127.0.0.1:7878".into() }
    }
}

/// Where comparison masks come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    /// Complete records from the trusted dealer.
    #[default]
    Dealer,
    /// Generated by the parties with OT and the wrap circuit.
    Interactive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OtKind {
    /// Precomputed OT on dealer correlations.
    #[default]
    Dealer,
    ChouOrlandi,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrapKind {
    #[default]
    Garbled,
    Dealer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Providers {
    pub masks: MaskSource,
    pub ot: OtKind,
    pub wrap: WrapKind,
}

/// Correlation counts for `dealer-gen`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolCounts {
    pub triples: usize,
    pub prime_triples: usize,
    pub masks: usize,
    /// `[m, n, v, count]`
    pub mat_triples: Vec<[usize; 4]>,
}

impl PoolCounts {
    pub fn plan(&self) -> PoolPlan {
        PoolPlan {
            ring: CompareRing::default(),
            triples: self.triples,
            prime_triples: self.prime_triples,
            masks: self.masks,
            mat_triples: self.mat_triples.iter().map(|a| (a[0], a[1], a[2], a[3])).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    /// Number of test images to classify.
    pub images: usize,
    /// Checkpoint file stem as written by `train`. Without one, inference
    /// uses the seeded initial weights.
    pub checkpoint: Option<PathBuf>,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection { images: 1, checkpoint: None }
    }
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_seed(&s).map_err(serde::de::Error::custom)
    }
}

/// Hex seed, with or without `0x`.
pub fn parse_seed(s: &str) -> Result<u64, String> {
    let t = s.trim().trim_start_matches("0x");
    u64::from_str_radix(t, 16).map_err(|e| format!("seed {s:?} is not hex: {e}"))
}

/// Independent 32-byte seeds for each purpose.
pub fn derive_seed(master: u64, purpose: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"secshare/seed/");
    h.update(purpose.as_bytes());
    h.update(master.to_le_bytes());
    h.finalize().into()
}

pub fn derive_u64(master: u64, purpose: &str) -> u64 {
    u64::from_le_bytes(derive_seed(master, purpose)[..8].try_into().unwrap())
}

impl RunConfig {
    pub fn new(network: &str, seed: u64) -> Self {
        RunConfig {
            network: network.into(),
            seed,
            data: DataPaths::default(),
            train: TrainSection::default(),
            transport: TransportSection::default(),
            providers: Providers::default(),
            pools: PoolCounts::default(),
            infer: InferSection::default(),
            exp_table: None,
        }
    }

    /// Parse and resolve relative data paths against the file's directory.
    pub fn load(path: &Path) -> AppResult<Self> {
        let bytes = formats::read_file(path)?;
        let mut cfg: RunConfig = serde_json::from_slice(&bytes).map_err(|e| AppError::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.train_images,
            &mut cfg.data.train_labels,
            &mut cfg.data.test_images,
            &mut cfg.data.test_labels,
            &mut cfg.train.checkpoint,
            &mut cfg.infer.checkpoint,
            &mut cfg.exp_table,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> AppResult<()> {
        let spec = self.spec()?;
        self.train_config(&spec).update_shift()?;
        if self.train.exp_segments == 0 {
            return Err(AppError::Config("exp_segments must be positive".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> AppResult<NetworkSpec> {
        NetworkSpec::by_name(&self.network).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn train_config(&self, spec: &NetworkSpec) -> TrainConfig {
        let mut t = TrainConfig::for_network(spec);
        if let Some(lr) = self.train.lr_log2 {
            t.lr_log2 = lr;
        }
        t.batch = self.train.batch;
        t.epochs = if self.train.full_run { 15 } else { self.train.epochs };
        t.seed = self.seed;
        t.exp_segments = self.train.exp_segments;
        t
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(json).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Swap config hashes over an unmetered control message; both sides abort
/// on a mismatch.
pub fn handshake<L: Link>(session: &mut Session<L>, cfg: &RunConfig) -> AppResult<()> {
    let ours = cfg.hash();
    let theirs = session.control_exchange(&ours)?;
    if theirs != ours {
        return Err(AppError::ConfigMismatch { ours: hex::encode(ours), theirs: hex::encode(theirs) });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_keeps_the_hash() {
        let mut cfg = RunConfig::new("A", 0xdead_beef);
        cfg.pools.mat_triples.push([2, 3, 4, 5]);
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = RunConfig::new("A", 0xdead_beee);
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"network":"D","seed":"0x2a"}"#).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.batch, 128);
        cfg.validate().unwrap();
        assert_eq!(cfg.train_config(&cfg.spec().unwrap()).update_shift().unwrap(), 12);
    }

    #[test]
    fn unknown_fields_and_networks_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"network":"A","seed":"1","bogus":1}"#).is_err());
        let cfg = RunConfig::new("Z", 1);
        assert!(matches!(cfg.validate(), Err(AppError::Config(_))));
    }

    #[test]
    fn derived_seeds_are_independent() {
        assert_ne!(derive_seed(1, "dealer"), derive_seed(1, "shared"));
        assert_ne!(derive_seed(1, "dealer"), derive_seed(2, "dealer"));
    }
}
