//! Experiment configuration and its canonical hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::AcquisitionKind;
use crate::benchmarks::BenchmarkSpec;
use crate::error::{Error, Result};
use crate::mdn::{MdnArch, TrainConfig};
use crate::selection::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub depth: usize,
    pub components: usize,
    pub n_ens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pool_size: usize,
    pub test_size: usize,
    pub init_size: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub acquisition: AcquisitionKind,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default = "default_ridge")]
    pub bait_ridge: f64,
    /// Size of a fixed input set on which the mean MI-LB score is logged
    /// every round (0 disables it).
    #[serde(default)]
    pub probe_size: usize,
}

fn default_chunk() -> usize {
    256
}

fn default_ridge() -> f64 {
    1e-3
}

impl ExperimentConfig {
    /// Built-in settings for one of the three benchmarks.
    pub fn defaults(benchmark: &str) -> Result<Self> {
        let spec = BenchmarkSpec::from_name(benchmark)?;
        let base = |model: ModelConfig, train: TrainConfig, rounds: usize, batch: usize| Self {
            benchmark: spec.clone(),
            model,
            train,
            pool_size: 50_000,
            test_size: 2000,
            init_size: 100,
            rounds,
            batch_size: batch,
            acquisition: AcquisitionKind::Milb,
            strategy: Strategy::Topk,
            seeds: vec![0, 1, 2, 3, 4],
            chunk_size: 256,
            bait_ridge: 1e-3,
            probe_size: 0,
        };
        let model = |hidden, depth, components| ModelConfig {
            hidden,
            depth,
            components,
            n_ens: 8,
        };
        Ok(match spec {
            BenchmarkSpec::Multimodal(_) => base(model(128, 2, 5), TrainConfig::default(), 20, 50),
            BenchmarkSpec::DoubleWell(_) => base(model(128, 3, 8), TrainConfig::default(), 20, 50),
            BenchmarkSpec::Ternary(_) => base(model(64, 2, 4), TrainConfig::ternary(), 30, 15),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn arch(&self, input_dim: usize, output_dim: usize) -> MdnArch {
        MdnArch {
            input_dim,
            output_dim,
            hidden: self.model.hidden,
            depth: self.model.depth,
            components: self.model.components,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.strategy.validate()?;
        let m = &self.model;
        if m.components == 0 || m.n_ens == 0 || (m.depth > 0 && m.hidden == 0) {
            return Err(Error::Config(format!("degenerate model {m:?}")));
        }
        if self.pool_size == 0 || self.test_size == 0 || self.init_size == 0 || self.chunk_size == 0 {
            return Err(Error::Config("pool, test, initial and chunk sizes must be positive".into()));
        }
        if self.rounds > 0 && self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let budget = self.init_size + self.rounds * self.batch_size;
        if budget > self.pool_size {
            return Err(Error::Config(format!(
                "labeling budget {budget} exceeds pool size {}",
                self.pool_size
            )));
        }
        if self.acquisition.is_set_valued() && self.strategy != Strategy::Topk {
            return Err(Error::Config(format!(
                "{} selects batches directly and takes no selection strategy",
                self.acquisition
            )));
        }
        if !(self.bait_ridge > 0.0) {
            return Err(Error::Config("bait_ridge must be positive".into()));
        }
        Ok(())
    }

    /// JSON with object keys in sorted order.
    pub fn canonical_json(&self) -> String {
        // serde_json::Value keeps object keys in a BTreeMap
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Short label such as `milb_topk` or `milb_sbal`.
    pub fn method(&self) -> String {
        if self.strategy == Strategy::Topk {
            self.acquisition.name().to_string()
        } else {
            format!("{}_{}", self.acquisition.name(), self.strategy.name())
        }
    }
}
