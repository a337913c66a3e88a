//! Run configuration: one JSON document with defaults for every field and
//! dotted-path overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{ModelConfig, NmsConfig};
use crate::scene::SyntheticConfig;
use crate::tokenizer::SelectionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub goals: PathBuf,
    pub checkpoints: PathBuf,
    pub metrics_log: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            train: "data/train.jsonl".into(),
            val: "data/val.jsonl".into(),
            goals: "data/goals.json".into(),
            checkpoints: "runs/checkpoints".into(),
            metrics_log: "runs/metrics.jsonl".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// First epoch (zero-based) whose learning rate is decayed; `None`
    /// keeps the rate constant.
    pub decay_start_epoch: Option<usize>,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            decay_start_epoch: Some(22),
            decay_every: 2,
            decay_factor: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Global gradient norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub schedule: ScheduleConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            grad_clip: Some(10.0),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl OptimizerConfig {
    /// Learning rate during `epoch` (zero-based): decayed by `decay_factor`
    /// at `decay_start_epoch` and again every `decay_every` epochs after it.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule.decay_start_epoch {
            Some(start) if epoch >= start => {
                let k = (epoch - start) / self.schedule.decay_every + 1;
                self.lr * self.schedule.decay_factor.powi(k as i32)
            }
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Training targets evaluated for the checkpoint metric snapshot.
    pub snapshot_targets: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 4,
            epochs: 30,
            max_steps: None,
            snapshot_targets: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataPaths,
    pub synthetic: SyntheticConfig,
    pub val_scenarios: usize,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub nms: NmsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Laptop-sized profile.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            data: DataPaths::default(),
            synthetic: SyntheticConfig::default(),
            val_scenarios: 50,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            nms: NmsConfig::default(),
        }
    }

    /// Full-size model and schedule.
    pub fn full() -> Self {
        let mut c = RunConfig::desk();
        c.model.encoder = EncoderConfig {
            layers: 6,
            heads: 8,
            model_dim: 256,
            ffn_dim: 1024,
            knn_k: 32,
        };
        c.model.decoder = DecoderConfig {
            layers: 6,
            heads: 8,
            ffn_dim: 1024,
            modes: 64,
            trajectory_tokens: 128,
            motion_tokens: 128,
        };
        c.model.selection = SelectionConfig {
            map_tokens: 768,
            voxel_tokens: 256,
            ..SelectionConfig::default()
        };
        c.optimizer.lr = 1e-4;
        c.optimizer.schedule.decay_start_epoch = Some(22);
        c.training.batch_size = 10;
        c.training.epochs = 30;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "full" => Ok(RunConfig::full()),
            other => Err(Error::config(format!("unknown profile {other:?} (expected desk or full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0) || o.weight_decay < 0.0 || o.schedule.decay_every == 0 || !(o.schedule.decay_factor > 0.0) {
            return Err(Error::config("optimizer settings out of range"));
        }
        if !(0.0..1.0).contains(&o.betas.0) || !(0.0..1.0).contains(&o.betas.1) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.training.batch_size == 0 || self.training.epochs == 0 || self.val_scenarios == 0 {
            return Err(Error::config("batch_size, epochs and val_scenarios must be positive"));
        }
        if self.nms.keep == 0 || self.nms.keep > self.model.decoder.modes || !(self.nms.radius >= 0.0) {
            return Err(Error::config("nms.keep must be in 1..=modes and radius non-negative"));
        }
        Ok(())
    }

    /// Parses a config document on top of the defaults of `base`.
    pub fn from_json_over(base: &RunConfig, text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut merged = serde_json::to_value(base).expect("config serializes");
        merge(&mut merged, doc);
        from_value(merged)
    }

    /// Applies `path = value` overrides, e.g. `optimizer.lr = 0.01`. Values
    /// parse as JSON and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for (path, raw) in overrides {
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            let mut cur = &mut v;
            let parts: Vec<&str> = path.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = cur
                    .as_object_mut()
                    .ok_or_else(|| Error::config(format!("{path}: {part:?} is not inside an object")))?;
                if !obj.contains_key(*part) {
                    return Err(Error::config(format!("unknown config key {path:?}")));
                }
                if i + 1 == parts.len() {
                    obj.insert((*part).to_string(), value.clone());
                    break;
                }
                cur = obj.get_mut(*part).expect("checked");
            }
        }
        from_value(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn from_value(v: Value) -> Result<RunConfig> {
    let c: RunConfig = serde_json::from_value(v).map_err(|e| Error::config(e.to_string()))?;
    c.validate()?;
    Ok(c)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
