use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{ArchitectureSpec, ModelBundle, SeedRecord, Subnet};
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub const CHECKPOINT_FORMAT: &str = "exprgan-checkpoint/1";
const META_FILE: &str = "metadata.json";
const PARAMS_FILE: &str = "params.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: String,
    pub spec: ArchitectureSpec,
    pub stage: u8,
    pub seeds: SeedRecord,
    pub classifier_trained: bool,
    pub feature_net_trained: bool,
    /// Short content hash of the parameter file.
    pub checkpoint_id: String,
}

impl CheckpointMeta {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(META_FILE))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Version {
                found: meta.format_version,
                expected: CHECKPOINT_FORMAT.to_string(),
            });
        }
        Ok(meta)
    }
}

/// Metadata and parameter file paths of a checkpoint directory.
pub fn checkpoint_files(dir: &Path) -> [std::path::PathBuf; 2] {
    [dir.join(META_FILE), dir.join(PARAMS_FILE)]
}

pub(crate) fn save_tensors(map: &HashMap<String, Tensor>, path: &Path) -> Result<()> {
    candle_core::safetensors::save(map, path)?;
    Ok(())
}

pub(crate) fn load_tensors(path: &Path) -> Result<HashMap<String, Tensor>> {
    Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
}

impl ModelBundle {
    /// Write the bundle to `dir` and return its checkpoint id.
    pub fn save(&self, dir: &Path) -> Result<String> {
        fs::create_dir_all(dir)?;
        let mut all = HashMap::new();
        for s in Subnet::ALL {
            for (k, v) in self.store(s).tensors() {
                all.insert(format!("{}/{k}", s.name()), v);
            }
        }
        let params_path = dir.join(PARAMS_FILE);
        save_tensors(&all, &params_path)?;
        let checkpoint_id = sha256_hex(&fs::read(&params_path)?)[..12].to_string();
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_FORMAT.to_string(),
            spec: self.spec.clone(),
            stage: self.stage,
            seeds: self.seeds,
            classifier_trained: self.classifier_trained,
            feature_net_trained: self.feature_net.is_trained(),
            checkpoint_id: checkpoint_id.clone(),
        };
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
        Ok(checkpoint_id)
    }

    /// Load a bundle, verifying format version and that every stored array
    /// matches the shapes implied by the stored architecture.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = CheckpointMeta::read(dir)?;
        let all = load_tensors(&dir.join(PARAMS_FILE))?;
        let mut bundle = ModelBundle::new(meta.spec.clone(), meta.seeds.init)?;
        let mut grouped: HashMap<&str, HashMap<String, Tensor>> = HashMap::new();
        for (k, v) in &all {
            let (net, rest) = k
                .split_once('/')
                .ok_or_else(|| Error::Shape(format!("unexpected checkpoint key {k}")))?;
            grouped.entry(net).or_default().insert(rest.to_string(), v.clone());
        }
        for s in Subnet::ALL {
            let tensors = grouped.remove(s.name()).unwrap_or_default();
            bundle.store(s).load(&tensors)?;
        }
        if let Some(extra) = grouped.keys().next() {
            return Err(Error::Shape(format!("checkpoint has unknown subnetwork {extra}")));
        }
        bundle.stage = meta.stage;
        bundle.classifier_trained = meta.classifier_trained;
        if meta.feature_net_trained {
            bundle.feature_net.mark_trained();
        }
        Ok(bundle)
    }
}
