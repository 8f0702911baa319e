//! Multinomial logistic regression over hashed features, trained with
//! mini-batch gradient descent and dev-set early stopping.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize, FeatureConfig, SparseVector};
use super::{ClassProbs, FeatureMode, ModelError};
use crate::annotation::LabelCoarse;
use crate::augment::LabeledDataset;
use crate::corpus::Tweet;
use crate::metrics::{macro_f1, ConfusionMatrix};

const FORMAT: &str = "solidarity-baseline";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
    pub dim: usize,
    pub mode: FeatureMode,
    pub bigrams: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 0.2,
            l2: 1e-4,
            epochs: 30,
            batch: 16,
            patience: 3,
            seed: 0,
            dim: 1 << 18,
            mode: FeatureMode::TextAndHashtags,
            bigrams: true,
        }
    }
}

impl Hyperparams {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            mode: self.mode,
            dim: self.dim,
            bigrams: self.bigrams,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.features().validate()?;
        let bad = |m: &str| Err(ModelError::InvalidHyperparams(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.l2 >= 0.0 && self.lr * self.l2 < 1.0) {
            return bad("l2 must be non-negative with lr·l2 < 1");
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub hyperparams: Hyperparams,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub dev_macro_f1: Option<f64>,
    /// Mean training loss per epoch (data term plus L2 penalty).
    pub epoch_losses: Vec<f64>,
    pub train_size: usize,
}

/// Trained (or zero-initialized) 3-class linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    /// Feature-major layout: `weights[feature * 3 + class]`.
    weights: Vec<f64>,
    bias: [f64; 3],
    features: FeatureConfig,
    pub metadata: TrainingMetadata,
}

impl BaselineModel {
    pub fn zeros(hp: Hyperparams) -> Result<Self, ModelError> {
        hp.features().validate()?;
        Ok(BaselineModel {
            weights: vec![0.0; hp.dim * 3],
            bias: [0.0; 3],
            features: hp.features(),
            metadata: TrainingMetadata {
                hyperparams: hp,
                epochs_run: 0,
                best_epoch: 0,
                dev_macro_f1: None,
                epoch_losses: Vec::new(),
                train_size: 0,
            },
        })
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> [f64; 3] {
        self.bias
    }

    pub fn set_bias(&mut self, bias: [f64; 3]) {
        self.bias = bias;
    }

    pub fn logits(&self, x: &SparseVector) -> [f64; 3] {
        logits_scaled(&self.weights, 1.0, &self.bias, x)
    }

    pub fn predict_vector(&self, x: &SparseVector) -> ClassProbs {
        ClassProbs::from_logits(self.logits(x))
    }

    pub fn predict_tweet(&self, tweet: &Tweet) -> ClassProbs {
        self.predict_vector(&featurize(tweet, &self.features))
    }

    /// Mean cross-entropy plus `l2/2 · ‖W‖²`, and its exact gradient
    /// (dense, same layout as the weights) with respect to weights and bias.
    pub fn loss_and_gradient(&self, data: &[(SparseVector, LabelCoarse)], l2: f64) -> (f64, Vec<f64>, [f64; 3]) {
        let n = data.len() as f64;
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = [0.0; 3];
        let mut loss = 0.0;
        for (x, y) in data {
            let (ce, residual) = example_residual(&self.weights, 1.0, &self.bias, x, *y);
            loss += ce / n;
            for &(i, v) in &x.entries {
                for c in 0..3 {
                    grad_w[i as usize * 3 + c] += v * residual[c] / n;
                }
            }
            for c in 0..3 {
                grad_b[c] += residual[c] / n;
            }
        }
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        loss += 0.5 * l2 * sq;
        for (g, w) in grad_w.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (loss, grad_w, grad_b)
    }
}

fn logits_scaled(weights: &[f64], scale: f64, bias: &[f64; 3], x: &SparseVector) -> [f64; 3] {
    let mut z = [0.0; 3];
    for &(i, v) in &x.entries {
        let base = i as usize * 3;
        for c in 0..3 {
            z[c] += v * weights[base + c];
        }
    }
    [bias[0] + scale * z[0], bias[1] + scale * z[1], bias[2] + scale * z[2]]
}

/// Cross-entropy of one example and the softmax residual `p - onehot(y)`.
fn example_residual(
    weights: &[f64],
    scale: f64,
    bias: &[f64; 3],
    x: &SparseVector,
    y: LabelCoarse,
) -> (f64, [f64; 3]) {
    let p = ClassProbs::from_logits(logits_scaled(weights, scale, bias, x)).0;
    let ce = -p[y.index()].max(f64::MIN_POSITIVE).ln();
    let mut r = p;
    r[y.index()] -= 1.0;
    (ce, r)
}

fn dev_macro_f1(weights: &[f64], scale: f64, bias: &[f64; 3], dev: &[(SparseVector, LabelCoarse)]) -> f64 {
    let mut m = ConfusionMatrix::new(LabelCoarse::ALL.to_vec());
    for (x, y) in dev {
        let pred = ClassProbs::from_logits(logits_scaled(weights, scale, bias, x)).argmax();
        m.add(y, &pred).expect("coarse labels are in the matrix");
    }
    macro_f1(&m).map(|r| r.macro_f1).unwrap_or(0.0)
}

fn vectorize(d: &LabeledDataset, cfg: &FeatureConfig) -> Vec<(SparseVector, LabelCoarse)> {
    d.iter().map(|e| (featurize(&e.tweet, cfg), e.label)).collect()
}

/// Trains the baseline.
///
/// Weights are stored as `scale · v` so the L2 shrinkage of every weight is
/// a single multiplication per batch; only features present in the batch
/// touch `v`. The dev macro-F1 is evaluated after every epoch and the best
/// epoch's parameters are returned. Training stops once `patience` + 1
/// consecutive epochs fail to improve on the best.
pub fn train_baseline(train: &LabeledDataset, dev: &LabeledDataset, hp: Hyperparams) -> Result<BaselineModel, ModelError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySet("training"));
    }
    if dev.is_empty() {
        return Err(ModelError::EmptySet("dev"));
    }
    let present: Vec<LabelCoarse> = LabelCoarse::ALL.into_iter().filter(|&l| train.count(l) > 0).collect();
    if present.len() == 1 {
        return Err(ModelError::SingleClass(present[0]));
    }

    let cfg = hp.features();
    let train_x = vectorize(train, &cfg);
    let dev_x = vectorize(dev, &cfg);
    let n = train_x.len();

    let mut v = vec![0.0; cfg.dim * 3];
    let mut scale = 1.0f64;
    let mut bias = [0.0f64; 3];
    let decay = 1.0 - hp.lr * hp.l2;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, usize, Vec<f64>, [f64; 3])> = None;
    let mut since_best = 0usize;
    let mut losses = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=hp.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut data_loss = 0.0;
        for batch in order.chunks(hp.batch) {
            let bsz = batch.len() as f64;
            let mut grad: BTreeMap<u32, [f64; 3]> = BTreeMap::new();
            let mut grad_b = [0.0; 3];
            for &k in batch {
                let (x, y) = &train_x[k];
                let (ce, r) = example_residual(&v, scale, &bias, x, *y);
                data_loss += ce;
                for &(i, val) in &x.entries {
                    let g = grad.entry(i).or_insert([0.0; 3]);
                    for c in 0..3 {
                        g[c] += val * r[c] / bsz;
                    }
                }
                for c in 0..3 {
                    grad_b[c] += r[c] / bsz;
                }
            }
            if !data_loss.is_finite() {
                return Err(ModelError::Diverged { epoch, loss: data_loss });
            }
            scale *= decay;
            for (i, g) in grad {
                let base = i as usize * 3;
                for c in 0..3 {
                    v[base + c] -= hp.lr * g[c] / scale;
                }
            }
            for c in 0..3 {
                bias[c] -= hp.lr * grad_b[c];
            }
            if scale < 1e-6 {
                for w in v.iter_mut() {
                    *w *= scale;
                }
                scale = 1.0;
            }
        }
        let sq: f64 = v.iter().map(|w| w * w).sum::<f64>() * scale * scale;
        let epoch_loss = data_loss / n as f64 + 0.5 * hp.l2 * sq;
        if !epoch_loss.is_finite() || v.iter().any(|w| !w.is_finite()) || bias.iter().any(|b| !b.is_finite()) {
            return Err(ModelError::Diverged { epoch, loss: epoch_loss });
        }
        losses.push(epoch_loss);

        let f1 = dev_macro_f1(&v, scale, &bias, &dev_x);
        log::debug!("epoch {epoch}: loss {epoch_loss:.5} dev macro-F1 {f1:.4}");
        if best.as_ref().is_none_or(|b| f1 > b.0) {
            best = Some((f1, epoch, v.iter().map(|w| w * scale).collect(), bias));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > hp.patience {
                break;
            }
        }
    }

    let (f1, best_epoch, weights, bias) = best.expect("at least one epoch ran");
    Ok(BaselineModel {
        weights,
        bias,
        features: cfg,
        metadata: TrainingMetadata {
            hyperparams: hp,
            epochs_run,
            best_epoch,
            dev_macro_f1: Some(f1),
            epoch_losses: losses,
            train_size: n,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dim: usize,
    mode: FeatureMode,
    bigrams: bool,
    bias: [f64; 3],
    /// Non-zero feature columns: `[index, w_S, w_A, w_O]`.
    weights: Vec<(u32, [f64; 3])>,
    metadata: TrainingMetadata,
}

/// Writes the model as a JSON container holding only non-zero weight columns.
pub fn save_model<W: Write>(w: W, model: &BaselineModel) -> Result<(), ModelError> {
    let weights = model
        .weights
        .chunks_exact(3)
        .enumerate()
        .filter(|(_, col)| col.iter().any(|&x| x != 0.0))
        .map(|(i, col)| (i as u32, [col[0], col[1], col[2]]))
        .collect();
    let file = ModelFile {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        dim: model.features.dim,
        mode: model.features.mode,
        bigrams: model.features.bigrams,
        bias: model.bias,
        weights,
        metadata: model.metadata.clone(),
    };
    serde_json::to_writer(w, &file).map_err(|e| ModelError::Format(e.to_string()))
}

pub fn load_model<R: Read>(r: R) -> Result<BaselineModel, ModelError> {
    let file: ModelFile = serde_json::from_reader(r).map_err(|e| ModelError::Format(e.to_string()))?;
    if file.format != FORMAT || file.version != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported container {} v{}",
            file.format, file.version
        )));
    }
    let features = FeatureConfig {
        mode: file.mode,
        dim: file.dim,
        bigrams: file.bigrams,
    };
    features.validate()?;
    let mut weights = vec![0.0; file.dim * 3];
    for (i, col) in file.weights {
        let i = i as usize;
        if i >= file.dim {
            return Err(ModelError::Format(format!("feature index {i} out of range")));
        }
        weights[i * 3..i * 3 + 3].copy_from_slice(&col);
    }
    if weights.iter().chain(&file.bias).any(|w| !w.is_finite()) {
        return Err(ModelError::Format("non-finite parameter".into()));
    }
    Ok(BaselineModel {
        weights,
        bias: file.bias,
        features,
        metadata: file.metadata,
    })
}
