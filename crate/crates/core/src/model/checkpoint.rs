//! Versioned JSON checkpoint format: metadata plus a flat map from
//! parameter name to `{shape, values}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

use super::{
    BaseModelParams, GateWeights, GruWeights, MlpParams, NormStats, PlainGruModel, TargetSpace,
};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorData {
    shape: [usize; 2],
    values: Vec<f64>,
}

impl TensorData {
    fn from_tensor(t: &Tensor) -> Self {
        TensorData {
            shape: t.shape(),
            values: t.data().to_vec(),
        }
    }

    fn into_tensor(self) -> Result<Tensor> {
        Tensor::from_vec(self.shape[0], self.shape[1], self.values)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    kind: String,
    horizon: usize,
    t_window: usize,
    hidden: usize,
    k_steps: usize,
    target_space: TargetSpace,
    decoder_layers: usize,
    norm: NormStats,
    params: BTreeMap<String, TensorData>,
}

/// A checkpointable model.
#[derive(Clone, Debug)]
pub enum CheckpointModel {
    Base(BaseModelParams),
    PlainGru(PlainGruModel),
}

fn gate_entries(prefix: &str, g: &GateWeights, out: &mut BTreeMap<String, TensorData>) {
    for (k, t) in g.theta.iter().enumerate() {
        out.insert(format!("{prefix}.theta{k}"), TensorData::from_tensor(t));
    }
    out.insert(format!("{prefix}.bias"), TensorData::from_tensor(&g.bias));
}

fn gru_entries(prefix: &str, g: &GruWeights, out: &mut BTreeMap<String, TensorData>) {
    gate_entries(&format!("{prefix}.reset"), &g.reset, out);
    gate_entries(&format!("{prefix}.update"), &g.update, out);
    gate_entries(&format!("{prefix}.candidate"), &g.candidate, out);
}

fn mlp_entries(prefix: &str, m: &MlpParams, out: &mut BTreeMap<String, TensorData>) {
    for (i, (w, b)) in m.layers.iter().enumerate() {
        out.insert(format!("{prefix}.{i}.weight"), TensorData::from_tensor(w));
        out.insert(format!("{prefix}.{i}.bias"), TensorData::from_tensor(b));
    }
}

fn take(params: &mut BTreeMap<String, TensorData>, name: &str) -> Result<Tensor> {
    params
        .remove(name)
        .ok_or_else(|| Error::Config(format!("checkpoint missing parameter {name}")))?
        .into_tensor()
}

fn take_gate(
    params: &mut BTreeMap<String, TensorData>,
    prefix: &str,
    k_steps: usize,
) -> Result<GateWeights> {
    let theta = (0..k_steps)
        .map(|k| take(params, &format!("{prefix}.theta{k}")))
        .collect::<Result<Vec<_>>>()?;
    let bias = take(params, &format!("{prefix}.bias"))?;
    Ok(GateWeights { theta, bias })
}

fn take_gru(
    params: &mut BTreeMap<String, TensorData>,
    prefix: &str,
    k_steps: usize,
    hidden: usize,
) -> Result<GruWeights> {
    Ok(GruWeights {
        reset: take_gate(params, &format!("{prefix}.reset"), k_steps)?,
        update: take_gate(params, &format!("{prefix}.update"), k_steps)?,
        candidate: take_gate(params, &format!("{prefix}.candidate"), k_steps)?,
        hidden,
    })
}

fn take_mlp(
    params: &mut BTreeMap<String, TensorData>,
    prefix: &str,
    n_layers: usize,
) -> Result<MlpParams> {
    let layers = (0..n_layers)
        .map(|i| {
            Ok((
                take(params, &format!("{prefix}.{i}.weight"))?,
                take(params, &format!("{prefix}.{i}.bias"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MlpParams { layers })
}

pub fn save_checkpoint(model: &CheckpointModel, path: &Path) -> Result<()> {
    let file = match model {
        CheckpointModel::Base(p) => {
            let mut params = BTreeMap::new();
            gru_entries("gcgru", &p.gcgru, &mut params);
            gru_entries("rain_gru", &p.rain_gru, &mut params);
            mlp_entries("decoder", &p.decoder, &mut params);
            CheckpointFile {
                version: CHECKPOINT_VERSION,
                kind: "dcrnn".into(),
                horizon: p.horizon,
                t_window: p.t_window,
                hidden: p.hidden(),
                k_steps: p.k_steps(),
                target_space: p.target_space,
                decoder_layers: p.decoder.layers.len(),
                norm: p.norm.clone(),
                params,
            }
        }
        CheckpointModel::PlainGru(p) => {
            let mut params = BTreeMap::new();
            gru_entries("gru", &p.gru, &mut params);
            mlp_entries("decoder", &p.decoder, &mut params);
            CheckpointFile {
                version: CHECKPOINT_VERSION,
                kind: "plain_gru".into(),
                horizon: p.horizon,
                t_window: p.t_window,
                hidden: p.gru.hidden,
                k_steps: 1,
                target_space: TargetSpace::Discharge,
                decoder_layers: p.decoder.layers.len(),
                norm: p.norm.clone(),
                params,
            }
        }
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointModel> {
    let text = std::fs::read_to_string(path)?;
    let mut file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    match file.kind.as_str() {
        "dcrnn" => Ok(CheckpointModel::Base(BaseModelParams {
            gcgru: take_gru(&mut file.params, "gcgru", file.k_steps, file.hidden)?,
            rain_gru: take_gru(&mut file.params, "rain_gru", 1, file.hidden)?,
            decoder: take_mlp(&mut file.params, "decoder", file.decoder_layers)?,
            norm: file.norm,
            t_window: file.t_window,
            horizon: file.horizon,
            target_space: file.target_space,
        })),
        "plain_gru" => Ok(CheckpointModel::PlainGru(PlainGruModel {
            gru: take_gru(&mut file.params, "gru", 1, file.hidden)?,
            decoder: take_mlp(&mut file.params, "decoder", file.decoder_layers)?,
            norm: file.norm,
            t_window: file.t_window,
            horizon: file.horizon,
        })),
        other => Err(Error::Config(format!("unknown checkpoint kind {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn base_checkpoint_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let norm = NormStats {
            stage_mean: vec![2.0, 3.0],
            stage_std: vec![0.5, 0.7],
            rain_mean: 0.2,
            rain_std: 1.1,
            target_mean: 2.0,
            target_std: 0.5,
        };
        let p = BaseModelParams::init(8, 2, 2, 12, 3, norm, TargetSpace::Stage, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&CheckpointModel::Base(p.clone()), &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let CheckpointModel::Base(q) = back else {
            panic!("wrong kind");
        };
        assert_eq!(q.gcgru.reset.theta, p.gcgru.reset.theta);
        assert_eq!(q.gcgru.candidate.bias, p.gcgru.candidate.bias);
        assert_eq!(q.decoder.layers, p.decoder.layers);
        assert_eq!(q.norm, p.norm);
        assert_eq!(q.horizon, 3);
        assert_eq!(q.target_space, TargetSpace::Stage);
    }
}
