//! Pool files: a JSON list of baseline model files and external endpoints.
//!
//! ```json
//! {"format": "solidarity-pool", "version": 1, "members": [
//!   {"id": "m00", "dev_score": 0.81, "model": "m00.json"},
//!   {"id": "xlmr", "dev_score": 0.84,
//!    "endpoint": {"transport": "subprocess", "command": ["python3", "serve.py"], "timeout_ms": 30000}}
//! ]}
//! ```
//!
//! Relative model paths are resolved against the pool file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use solidarity_core::model::{load_model, save_model, train_baseline, EndpointConfig, ExternalEndpoint, Hyperparams};
use solidarity_core::weak_supervision::ModelPool;
use solidarity_core::{BaselineModel, ClassifierHandle, LabeledDataset};

use crate::run::Run;

pub const POOL_FORMAT: &str = "solidarity-pool";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFile {
    pub format: String,
    pub version: u32,
    pub members: Vec<PoolMember>,
}

impl PoolFile {
    pub fn new(members: Vec<PoolMember>) -> Self {
        PoolFile {
            format: POOL_FORMAT.into(),
            version: 1,
            members,
        }
    }
}

pub fn load_pool(run: &mut Run, path: &Path) -> Result<ModelPool> {
    let data = run.read(path)?;
    let file: PoolFile = serde_json::from_slice(&data).with_context(|| format!("parsing pool file {}", path.display()))?;
    if file.format != POOL_FORMAT || file.version != 1 {
        bail!("{}: unsupported pool format {} v{}", path.display(), file.format, file.version);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut handles = Vec::with_capacity(file.members.len());
    for m in file.members {
        let mut h = match (&m.model, m.endpoint) {
            (Some(model), None) => {
                let p = base.join(model);
                let bytes = run.read(&p)?;
                let model = load_model(&bytes[..]).with_context(|| format!("loading model {}", p.display()))?;
                ClassifierHandle::baseline(m.id.clone(), model)
            }
            (None, Some(cfg)) => ClassifierHandle::external(m.id.clone(), ExternalEndpoint::new(cfg)),
            _ => bail!("{}: member {} needs exactly one of `model` or `endpoint`", path.display(), m.id),
        };
        // the pool file's score wins over the one stored in the model
        if m.dev_score.is_some() {
            h.dev_score = m.dev_score;
        }
        handles.push(h);
    }
    Ok(ModelPool::new(handles)?)
}

/// Hyperparameters of training variant `i`: seed offset by `i`, learning
/// rate cycling through ×1, ×0.5, ×2 and L2 alternating ×1, ×10 every three variants.
pub fn variant(base: &Hyperparams, i: usize) -> Hyperparams {
    const LR: [f64; 3] = [1.0, 0.5, 2.0];
    const L2: [f64; 2] = [1.0, 10.0];
    Hyperparams {
        lr: base.lr * LR[i % 3],
        l2: base.l2 * L2[(i / 3) % 2],
        seed: base.seed.wrapping_add(i as u64),
        ..*base
    }
}

pub struct TrainedPool {
    pub models: Vec<(String, BaselineModel)>,
}

impl TrainedPool {
    pub fn to_pool(&self) -> Result<ModelPool> {
        Ok(ModelPool::new(
            self.models
                .iter()
                .map(|(id, m)| ClassifierHandle::baseline(id.clone(), m.clone()))
                .collect(),
        )?)
    }

    /// Writes `<id>.json` per model and `pool.json` into `dir`.
    pub fn save(&self, run: &mut Run, dir: &Path) -> Result<PathBuf> {
        let mut members = Vec::with_capacity(self.models.len());
        for (id, m) in &self.models {
            let name = format!("{id}.json");
            let mut buf = Vec::new();
            save_model(&mut buf, m)?;
            run.write(&dir.join(&name), &buf)?;
            members.push(PoolMember {
                id: id.clone(),
                dev_score: m.metadata.dev_macro_f1,
                model: Some(PathBuf::from(name)),
                endpoint: None,
            });
        }
        let path = dir.join("pool.json");
        run.write_json(&path, &PoolFile::new(members))?;
        Ok(path)
    }
}

/// Trains `n` variants in parallel; each run is itself deterministic.
pub fn train_pool(train: &LabeledDataset, dev: &LabeledDataset, base: &Hyperparams, n: usize, prefix: &str) -> Result<TrainedPool> {
    let models = (0..n)
        .into_par_iter()
        .map(|i| {
            let hp = variant(base, i);
            let id = format!("{prefix}{i:02}");
            train_baseline(train, dev, hp)
                .with_context(|| format!("training {id}"))
                .map(|m| (id, m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedPool { models })
}
