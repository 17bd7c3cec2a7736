//! Checkpoint files: architecture, training step, and seed in the header, one
//! float32 block per named parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, ContainerWriter};
use crate::error::{Error, Result};
use crate::model::autodiff::ParamSet;
use crate::model::velocity::{ModelConfig, VelocityModel};

pub const CHECKPOINT_KIND: &str = "dub-engine/checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub step: usize,
    pub seed: u64,
    pub param_count: usize,
    /// Free-form training provenance (strategy name, config hash, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn encode_checkpoint(model: &VelocityModel, step: usize, seed: u64, extra: serde_json::Value) -> Result<Vec<u8>> {
    let mut w = ContainerWriter::new();
    for (name, m) in model.params().iter() {
        w.add(name, m);
    }
    let meta = CheckpointMeta {
        model: *model.config(),
        step,
        seed,
        param_count: model.count_params(),
        extra,
    };
    w.to_bytes(CHECKPOINT_KIND, serde_json::to_value(meta)?)
}

pub fn save_checkpoint(
    path: &Path,
    model: &VelocityModel,
    step: usize,
    seed: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let bytes = encode_checkpoint(model, step, seed, extra)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(VelocityModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(VelocityModel, CheckpointMeta)> {
    let mut c = Container::from_bytes(bytes)?;
    c.expect_kind(CHECKPOINT_KIND)?;
    let meta: CheckpointMeta = serde_json::from_value(c.header.meta.clone())?;
    let mut model = VelocityModel::new(meta.model, 0)?;
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    let mut params = ParamSet::new();
    for name in names {
        let m = c.take_block(&name)?;
        params.register(name, m);
    }
    model.load_params(params)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters() {
        let cfg = ModelConfig {
            depth: 1,
            width: 16,
            heads: 2,
            d_ref: 8,
            ..ModelConfig::default()
        };
        let m = VelocityModel::new(cfg, 42).unwrap();
        let bytes = encode_checkpoint(&m, 7, 42, serde_json::json!({"strategy": "m3"})).unwrap();
        let (back, meta) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(meta.step, 7);
        assert_eq!(meta.param_count, m.count_params());
        assert_eq!(encode_checkpoint(&back, 7, 42, meta.extra).unwrap(), bytes);
    }
}
