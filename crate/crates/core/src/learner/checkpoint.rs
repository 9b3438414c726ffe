//! Checkpoint files: magic line, length-prefixed JSON metadata, then the four
//! parameter vectors as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LearnerError, Method, MixtureNetwork, NetworkSpec, TrainConfig};
use crate::sim::CallConfig;

pub const MAGIC: &[u8; 9] = b"BWECKPT1\n";
pub const FORMAT: &str = "bwe-lab/checkpoint/v1";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    pub actor: Vec<f64>,
    pub critic1: Vec<f64>,
    pub critic2: Vec<f64>,
    pub value: Vec<f64>,
}

impl ModelParams {
    pub fn all_finite(&self) -> bool {
        [&self.actor, &self.critic1, &self.critic2, &self.value]
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub method: Method,
    pub epoch: usize,
    pub offline_mse: f64,
    pub train: TrainConfig,
    pub call: CallConfig,
    pub actor: NetworkSpec,
    pub value: NetworkSpec,
    pub critic: NetworkSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    lengths: [usize; 4],
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let header = Header {
            meta: self.meta.clone(),
            lengths: [p.actor.len(), p.critic1.len(), p.critic2.len(), p.value.len()],
        };
        let json = serde_json::to_vec(&header).expect("metadata serializes");
        let n: usize = header.lengths.iter().sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in p.actor.iter().chain(&p.critic1).chain(&p.critic2).chain(&p.value) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnerError> {
        let err = |m: &str| LearnerError::Checkpoint(m.to_string());
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| err("bad magic"))?;
        if rest.len() < 8 {
            return Err(err("truncated header"));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(err("truncated metadata"));
        }
        let (json, mut body) = rest.split_at(len);
        let header: Header =
            serde_json::from_slice(json).map_err(|e| LearnerError::Checkpoint(format!("metadata: {e}")))?;
        if header.meta.format != FORMAT {
            return Err(LearnerError::Checkpoint(format!("unsupported format {}", header.meta.format)));
        }
        let total: usize = header.lengths.iter().sum();
        if body.len() != 8 * total {
            return Err(err("parameter block has the wrong size"));
        }
        let mut take = |n: usize| {
            let (a, b) = body.split_at(8 * n);
            body = b;
            a.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect::<Vec<f64>>()
        };
        let [a, c1, c2, v] = header.lengths;
        let params = ModelParams { actor: take(a), critic1: take(c1), critic2: take(c2), value: take(v) };
        let ck = Checkpoint { meta: header.meta, params };
        ck.validate()?;
        Ok(ck)
    }

    /// Parameter counts must match the recorded network shapes.
    pub fn validate(&self) -> Result<(), LearnerError> {
        let m = &self.meta;
        let checks = [
            ("actor", &m.actor, &self.params.actor),
            ("critic1", &m.critic, &self.params.critic1),
            ("critic2", &m.critic, &self.params.critic2),
            ("value", &m.value, &self.params.value),
        ];
        for (name, spec, p) in checks {
            let want = MixtureNetwork::new(spec.clone()).n_params();
            if p.len() != want {
                return Err(LearnerError::Checkpoint(format!(
                    "{name} has {} parameters, shape needs {want}",
                    p.len()
                )));
            }
        }
        if !self.params.all_finite() {
            return Err(LearnerError::Checkpoint("non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnerError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|source| LearnerError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, LearnerError> {
        let bytes =
            std::fs::read(path).map_err(|source| LearnerError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes).map_err(|e| LearnerError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Flat tensor manifest for external runtimes: shapes, names and values
    /// of every parameter tensor, network by network.
    pub fn export_manifest(&self) -> serde_json::Value {
        let nets = [
            ("actor", &self.meta.actor, &self.params.actor),
            ("critic1", &self.meta.critic, &self.params.critic1),
            ("critic2", &self.meta.critic, &self.params.critic2),
            ("value", &self.meta.value, &self.params.value),
        ];
        let networks: Vec<serde_json::Value> = nets
            .iter()
            .map(|(name, spec, p)| {
                let net = MixtureNetwork::new((*spec).clone());
                let tensors: Vec<serde_json::Value> = net
                    .tensor_layout()
                    .into_iter()
                    .map(|(t, shape, off)| {
                        let n: usize = shape.iter().product();
                        serde_json::json!({
                            "name": t,
                            "shape": shape,
                            "layout": "row-major, input x output",
                            "values": &p[off..off + n],
                        })
                    })
                    .collect();
                serde_json::json!({ "name": name, "spec": spec, "tensors": tensors })
            })
            .collect();
        serde_json::json!({
            "format": "bwe-lab/export/v1",
            "method": self.meta.method,
            "epoch": self.meta.epoch,
            "call": self.meta.call,
            "actor_input": {
                "kind": self.meta.train.actor,
                "history_len": self.meta.train.history_len(),
            },
            "networks": networks,
        })
    }
}

/// Indices of the `k` checkpoints with the lowest offline MSE, best first.
/// Ties go to the earlier epoch.
pub fn select_checkpoints(checkpoints: &[Checkpoint], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..checkpoints.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ma, mb) = (&checkpoints[a].meta, &checkpoints[b].meta);
        ma.offline_mse.total_cmp(&mb.offline_mse).then(ma.epoch.cmp(&mb.epoch))
    });
    idx.truncate(k);
    idx
}
