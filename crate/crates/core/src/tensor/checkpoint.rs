use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named matrices plus an optional echo of the configuration that produced
/// them. Serialized as JSON; floats round-trip exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: BTreeMap<String, Matrix>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Matrix) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(ckpt.version));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}
