//! Versioned JSON checkpoint container.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumError, ParamStore, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub rng_seed: u64,
    /// Free-form descriptive data (model configuration, variant name, ...).
    pub metadata: serde_json::Value,
    pub params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: serde_json::Value) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            rng_seed: store.rng_seed(),
            metadata,
            params: store
                .iter()
                .map(|(name, t)| StoredParam {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_store(&self) -> Result<ParamStore, NumError> {
        let mut params = BTreeMap::new();
        for p in &self.params {
            let t = Tensor::new(&p.shape, p.values.clone())?;
            if params.insert(p.name.clone(), t).is_some() {
                return Err(NumError::DuplicateParam(p.name.clone()));
            }
        }
        Ok(ParamStore::from_parts(self.rng_seed, params))
    }

    pub fn save(&self, path: &Path) -> Result<(), NumError> {
        let text = serde_json::to_string(self).map_err(|e| NumError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| NumError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NumError> {
        let text = fs::read_to_string(path).map_err(|e| NumError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, NumError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| NumError::Checkpoint(e.to_string()))?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NumError::Checkpoint(format!(
                "unsupported checkpoint format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                header.format_version
            )));
        }
        serde_json::from_str(text).map_err(|e| NumError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_round_trip_is_exact() {
        let mut s = ParamStore::new(17);
        s.init_glorot("layer.w", 5, 3).unwrap();
        s.insert("layer.b", Tensor::new(&[3], vec![0.1, 1.0 / 3.0, -2e-17]).unwrap()).unwrap();
        let ck = Checkpoint::from_store(&s, serde_json::json!({"variant": "full"}));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_store().unwrap(), s);
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = r#"{"format_version": 99, "rng_seed": 0, "metadata": null, "params": []}"#;
        assert!(Checkpoint::parse(text).unwrap_err().to_string().contains("version 99"));
    }
}
