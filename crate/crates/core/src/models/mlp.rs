//! Two-hidden-layer ReLU network with a sigmoid output, trained with AdamW
//! on binary cross-entropy and early stopping on a held-out split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 32,
            dropout: 0.3,
            learning_rate: 5e-4,
            weight_decay: 1e-2,
            max_epochs: 100,
            patience: 15,
            batch_size: 32,
            validation_fraction: 0.2,
            seed: 42,
        }
    }
}

/// Flat parameter vector: W1 (h x d), b1, W2 (h x h), b2, w3 (h), b3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub inputs: usize,
    pub hidden: usize,
    pub values: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

fn offsets(d: usize, h: usize) -> Offsets {
    let w1 = 0;
    let b1 = w1 + h * d;
    let w2 = b1 + h;
    let b2 = w2 + h * h;
    let w3 = b2 + h;
    let b3 = w3 + h;
    Offsets {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        total: b3 + 1,
    }
}

/// Per-example inverted-dropout multipliers for the two hidden layers.
pub struct DropoutMasks {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl DropoutMasks {
    fn sample(rng: &mut ChaCha8Rng, hidden: usize, rate: f64) -> Self {
        let keep = 1.0 - rate;
        let mut draw = || {
            (0..hidden)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        };
        DropoutMasks {
            first: draw(),
            second: draw(),
        }
    }
}

struct Activations {
    pre1: Vec<f64>,
    h1: Vec<f64>,
    pre2: Vec<f64>,
    h2: Vec<f64>,
    logit: f64,
}

impl MlpParams {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        MlpParams {
            inputs,
            hidden,
            values: vec![0.0; offsets(inputs, hidden).total],
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
    pub fn init(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let o = offsets(inputs, hidden);
        let mut values = vec![0.0; o.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(o.w1..o.w2, inputs);
        fill(o.w2..o.w3, hidden);
        fill(o.w3..o.total, hidden);
        MlpParams {
            inputs,
            hidden,
            values,
        }
    }

    fn forward(&self, x: &[f64], masks: Option<&DropoutMasks>) -> Activations {
        let (d, h) = (self.inputs, self.hidden);
        let o = offsets(d, h);
        let p = &self.values;
        let mut pre1 = vec![0.0; h];
        let mut h1 = vec![0.0; h];
        for i in 0..h {
            let row = &p[o.w1 + i * d..o.w1 + (i + 1) * d];
            pre1[i] = p[o.b1 + i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            h1[i] = pre1[i].max(0.0) * masks.map_or(1.0, |m| m.first[i]);
        }
        let mut pre2 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        for i in 0..h {
            let row = &p[o.w2 + i * h..o.w2 + (i + 1) * h];
            pre2[i] = p[o.b2 + i] + row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>();
            h2[i] = pre2[i].max(0.0) * masks.map_or(1.0, |m| m.second[i]);
        }
        let logit = p[o.b3] + p[o.w3..o.b3].iter().zip(&h2).map(|(w, v)| w * v).sum::<f64>();
        Activations {
            pre1,
            h1,
            pre2,
            h2,
            logit,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.forward(x, None).logit).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    /// Mean binary cross-entropy over the rows and its gradient with respect
    /// to every parameter. `masks[i]` applies dropout to row `i` when given.
    pub fn loss_and_gradient(
        &self,
        rows: &[&[f64]],
        labels: &[bool],
        masks: Option<&[DropoutMasks]>,
    ) -> (f64, Vec<f64>) {
        let (d, h) = (self.inputs, self.hidden);
        let o = offsets(d, h);
        let p = &self.values;
        let mut grad = vec![0.0; o.total];
        let mut loss = 0.0;
        let n = rows.len() as f64;
        for (i, (x, &y)) in rows.iter().zip(labels).enumerate() {
            let mask = masks.map(|m| &m[i]);
            let a = self.forward(x, mask);
            let target = if y { 1.0 } else { 0.0 };
            // softplus(z) - y z, stable for large |z|.
            let z = a.logit;
            loss += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() } - target * z;

            let dz = (sigmoid(z) - target) / n;
            grad[o.b3] += dz;
            let mut dh2 = vec![0.0; h];
            for j in 0..h {
                grad[o.w3 + j] += dz * a.h2[j];
                dh2[j] = dz * p[o.w3 + j];
            }
            let mut dpre2 = vec![0.0; h];
            for j in 0..h {
                let keep = mask.map_or(1.0, |m| m.second[j]);
                dpre2[j] = if a.pre2[j] > 0.0 { dh2[j] * keep } else { 0.0 };
            }
            let mut dh1 = vec![0.0; h];
            for j in 0..h {
                if dpre2[j] == 0.0 {
                    continue;
                }
                grad[o.b2 + j] += dpre2[j];
                for k in 0..h {
                    grad[o.w2 + j * h + k] += dpre2[j] * a.h1[k];
                    dh1[k] += dpre2[j] * p[o.w2 + j * h + k];
                }
            }
            for j in 0..h {
                let keep = mask.map_or(1.0, |m| m.first[j]);
                let dpre1 = if a.pre1[j] > 0.0 { dh1[j] * keep } else { 0.0 };
                if dpre1 == 0.0 {
                    continue;
                }
                grad[o.b1 + j] += dpre1;
                for k in 0..d {
                    grad[o.w1 + j * d + k] += dpre1 * x[k];
                }
            }
        }
        (loss / n, grad)
    }

    pub fn loss(&self, rows: &[&[f64]], labels: &[bool]) -> f64 {
        self.loss_and_gradient(rows, labels, None).0
    }
}

/// AdamW state with decoupled weight decay.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    weight_decay: f64,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            weight_decay,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            params[i] *= 1.0 - self.lr * self.weight_decay;
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params: MlpParams,
    pub config: MlpConfig,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub validation_losses: Vec<f64>,
    pub training_losses: Vec<f64>,
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.params.inputs
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.params.predict_row(row)
    }
}

/// Stratified split of row indices into (train, validation).
pub fn stratified_holdout(labels: &[bool], fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            let pos = labels.iter().filter(|&&l| l).count();
            return Err(Error::InsufficientClasses {
                positives: pos,
                negatives: labels.len() - pos,
                required: 2,
            });
        }
        idx.shuffle(rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Trains on standardized rows with a seeded stratified validation split.
/// Errors with `InsufficientClasses` when a class has fewer than two rows.
pub fn train_mlp(x: &[Vec<f64>], y: &[bool], config: &MlpConfig) -> Result<MlpModel> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let d = x.first().ok_or(Error::Empty("training matrix"))?.len();
    for (i, row) in x.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: j });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_idx, val_idx) = stratified_holdout(y, config.validation_fraction, &mut rng)?;
    let val_rows: Vec<&[f64]> = val_idx.iter().map(|&i| x[i].as_slice()).collect();
    let val_labels: Vec<bool> = val_idx.iter().map(|&i| y[i]).collect();
    fit_with_validation(x, y, &train_idx, &val_rows, &val_labels, d, config, &mut rng)
}

/// Training loop shared by the public entry point and tests that supply
/// their own validation rows.
#[allow(clippy::too_many_arguments)]
fn fit_with_validation(
    x: &[Vec<f64>],
    y: &[bool],
    train_idx: &[usize],
    val_rows: &[&[f64]],
    val_labels: &[bool],
    d: usize,
    config: &MlpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MlpModel> {
    let mut params = MlpParams::init(d, config.hidden, rng);
    let mut opt = AdamW::new(params.values.len(), config.learning_rate, config.weight_decay);

    let mut best = params.clone();
    let mut best_loss = params.loss(val_rows, val_labels);
    let mut best_epoch = 0;
    let mut validation_losses = Vec::new();
    let mut training_losses = Vec::new();
    let mut order = train_idx.to_vec();
    let batch = config.batch_size.max(1);

    let mut epochs_run = 0;
    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| x[i].as_slice()).collect();
            let labels: Vec<bool> = chunk.iter().map(|&i| y[i]).collect();
            let masks: Option<Vec<DropoutMasks>> = (config.dropout > 0.0).then(|| {
                chunk
                    .iter()
                    .map(|_| DropoutMasks::sample(rng, config.hidden, config.dropout))
                    .collect()
            });
            let (loss, grad) = params.loss_and_gradient(&rows, &labels, masks.as_deref());
            epoch_loss += loss * chunk.len() as f64;
            opt.step(&mut params.values, &grad);
        }
        training_losses.push(epoch_loss / order.len().max(1) as f64);
        let val_loss = params.loss(val_rows, val_labels);
        validation_losses.push(val_loss);
        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }

    Ok(MlpModel {
        params: best,
        config: *config,
        best_epoch,
        epochs_run,
        validation_losses,
        training_losses,
    })
}
