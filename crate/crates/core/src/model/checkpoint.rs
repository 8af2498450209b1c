//! Versioned JSON checkpoints.
//!
//! Layout: `{"format": "jaenas-checkpoint", "version": 1, "config": {...},
//! "params": [{"name", "rows", "cols", "values"}...], "arch": {...} | null}`.
//! Values are written as `f64` in shortest round-trip decimal form, so a
//! save/load cycle is bit-exact for `f64` models.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{build_model, ArchParams, JaeModel, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "jaenas-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchRecord {
    pub temperature: f64,
    pub logits: NamedArray,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
    pub arch: Option<ArchRecord>,
}

fn to_array<T: Scalar>(name: &str, t: &Tensor<T>) -> NamedArray {
    NamedArray {
        name: name.to_string(),
        rows: t.rows(),
        cols: t.cols(),
        values: t.data().iter().map(|v| v.as_f64()).collect(),
    }
}

fn from_array<T: Scalar>(a: &NamedArray) -> Result<Tensor<T>> {
    Tensor::from_f64(a.rows, a.cols, &a.values)
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &JaeModel<T>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            params: model.named_params().into_iter().map(|(n, t)| to_array(&n, t)).collect(),
            arch: model.arch().map(|a| ArchRecord {
                temperature: a.temperature.as_f64(),
                logits: to_array("arch.logits", &a.logits),
            }),
        }
    }

    pub fn into_model<T: Scalar>(self) -> Result<JaeModel<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                self.format, self.version
            )));
        }
        // Layout comes from the config; every value is then overwritten.
        let mut model: JaeModel<T> = build_model(&self.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let slots = model.named_params_mut();
        if slots.len() != self.params.len() {
            return Err(Error::Serde(format!(
                "checkpoint has {} arrays, model layout needs {}",
                self.params.len(),
                slots.len()
            )));
        }
        for ((name, slot), array) in slots.into_iter().zip(&self.params) {
            if name != array.name || slot.shape() != [array.rows, array.cols] {
                return Err(Error::Serde(format!(
                    "array {} [{}x{}] does not fit slot {name} {:?}",
                    array.name,
                    array.rows,
                    array.cols,
                    slot.shape()
                )));
            }
            *slot = from_array(array)?;
        }
        match (model.arch_mut(), self.arch) {
            (Some(slot), Some(rec)) => {
                let logits: Tensor<T> = from_array(&rec.logits)?;
                if logits.shape() != slot.logits.shape() {
                    return Err(Error::Serde("architecture logits have the wrong shape".into()));
                }
                *slot = ArchParams {
                    logits,
                    temperature: T::of(rec.temperature),
                };
            }
            (None, None) => {}
            _ => return Err(Error::Serde("architecture logits present/absent inconsistently with config".into())),
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}
