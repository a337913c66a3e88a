//! Checkpoint directories: `manifest.json` plus `weights.bin`, a
//! concatenation of little-endian `f32` arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::decoder::IntentionGoalSet;
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::model::{DataShape, Model};
use crate::numerics::Tensor;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub epoch: usize,
    pub step: usize,
    /// Metrics of the stored (32-bit) weights on the snapshot targets.
    pub metrics: Option<MetricSet>,
    pub arrays: Vec<ArrayEntry>,
    pub shape: DataShape,
    pub config: RunConfig,
    pub goals: IntentionGoalSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub payload: Vec<u8>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        config: &RunConfig,
        epoch: usize,
        step: usize,
        metrics: Option<MetricSet>,
    ) -> Checkpoint {
        let mut arrays = Vec::with_capacity(model.store.len());
        let mut payload = Vec::with_capacity(model.store.scalar_count() * 4);
        for (_, p) in model.store.iter() {
            arrays.push(ArrayEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                offset: payload.len(),
            });
            for x in p.tensor.data() {
                payload.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        Checkpoint {
            manifest: Manifest {
                schema_version: CHECKPOINT_SCHEMA_VERSION,
                config_hash: config.hash(),
                epoch,
                step,
                metrics,
                arrays,
                shape: model.shape,
                config: config.clone(),
                goals: model.goals.clone(),
            },
            payload,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, manifest + "\n").map_err(|e| io_err(&mpath, e))?;
        let wpath = dir.join(WEIGHTS_FILE);
        fs::write(&wpath, &self.payload).map_err(|e| io_err(&wpath, e))
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_SCHEMA_VERSION as u64) {
            return Err(Error::Schema {
                expected: CHECKPOINT_SCHEMA_VERSION,
                found: version.map_or(0, |v| v as u32),
            });
        }
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let wpath = dir.join(WEIGHTS_FILE);
        let payload = fs::read(&wpath).map_err(|e| io_err(&wpath, e))?;
        let ckpt = Checkpoint { manifest, payload };
        ckpt.check_layout()?;
        Ok(ckpt)
    }

    fn check_layout(&self) -> Result<()> {
        let mut expected = 0;
        let mut names = std::collections::HashSet::new();
        for a in &self.manifest.arrays {
            if a.offset != expected {
                return Err(Error::Checkpoint(format!("array {} at offset {}, expected {expected}", a.name, a.offset)));
            }
            if !names.insert(a.name.as_str()) {
                return Err(Error::Checkpoint(format!("array {} listed twice", a.name)));
            }
            expected += a.shape.iter().product::<usize>() * 4;
        }
        if expected != self.payload.len() {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, manifest describes {expected}",
                self.payload.len()
            )));
        }
        Ok(())
    }

    fn array(&self, entry: &ArrayEntry) -> Vec<f64> {
        let n: usize = entry.shape.iter().product();
        self.payload[entry.offset..entry.offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect()
    }

    /// Rebuilds the model; every parameter must be present exactly once.
    pub fn to_model(&self) -> Result<Model> {
        let m = &self.manifest;
        let mut model = Model::new(&m.config.model, m.shape, m.goals.clone(), m.config.seed)?;
        if m.arrays.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} arrays, model has {} parameters",
                m.arrays.len(),
                model.store.len()
            )));
        }
        for entry in &m.arrays {
            let id = model
                .store
                .id(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", entry.name)))?;
            if model.store.tensor(id).shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{}: stored shape {:?}, model shape {:?}",
                    entry.name,
                    entry.shape,
                    model.store.tensor(id).shape()
                )));
            }
            *model.store.tensor_mut(id) = Tensor::new(entry.shape.clone(), self.array(entry))?.with_requires_grad(true);
        }
        Ok(model)
    }
}
