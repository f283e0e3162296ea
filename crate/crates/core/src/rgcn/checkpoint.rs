use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Matrix, ModelConfig, Param, Result, RgcnError, RgcnModel};
use crate::graph::NodeKind;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    shape: [usize; 2],
    values: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    entities: Vec<(NodeKind, String)>,
    target_mean: f64,
    target_std: f64,
    /// Caller-owned settings (feature encoder, feature names, ...).
    #[serde(default)]
    extra: Value,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: CheckpointConfig,
    relations: Vec<String>,
    params: BTreeMap<String, Tensor>,
}

fn encode(m: &Matrix) -> Tensor {
    let bytes: Vec<u8> = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    Tensor { shape: [m.rows(), m.cols()], values: STANDARD.encode(bytes) }
}

fn decode(name: &str, t: &Tensor) -> Result<Matrix> {
    let bytes = STANDARD.decode(&t.values).map_err(|e| RgcnError::Checkpoint(format!("{name}: {e}")))?;
    if bytes.len() != 8 * t.shape[0] * t.shape[1] {
        return Err(RgcnError::Checkpoint(format!("{name}: {} bytes for shape {:?}", bytes.len(), t.shape)));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Ok(Matrix::from_vec(t.shape[0], t.shape[1], data))
}

/// Serialize a model (and arbitrary caller settings) to checkpoint JSON.
pub fn save_checkpoint(model: &RgcnModel, extra: Value) -> Result<String> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: CheckpointConfig {
            model: model.config.clone(),
            entities: model.entities.clone(),
            target_mean: model.target_mean,
            target_std: model.target_std,
            extra,
        },
        relations: model.relations.clone(),
        params: model.params().iter().map(|p| (p.name.clone(), encode(&p.value))).collect(),
    };
    Ok(serde_json::to_string_pretty(&ckpt)?)
}

pub fn load_checkpoint(json: &str) -> Result<(RgcnModel, Value)> {
    let ckpt: Checkpoint = serde_json::from_str(json)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(RgcnError::Checkpoint(format!("unsupported version {}", ckpt.version)));
    }
    let cfg = ckpt.config;
    let template = RgcnModel::with_registries(cfg.model.clone(), ckpt.relations.clone(), cfg.entities.clone(), 0)?;
    let mut params = Vec::with_capacity(template.params().len());
    for p in template.params() {
        let t =
            ckpt.params.get(&p.name).ok_or_else(|| RgcnError::Checkpoint(format!("missing parameter {}", p.name)))?;
        params.push(Param { name: p.name.clone(), value: decode(&p.name, t)? });
    }
    if ckpt.params.len() != params.len() {
        return Err(RgcnError::Checkpoint("unexpected extra parameters".into()));
    }
    let model =
        RgcnModel::from_parts(cfg.model, ckpt.relations, cfg.entities, cfg.target_mean, cfg.target_std, params)?;
    Ok((model, cfg.extra))
}
