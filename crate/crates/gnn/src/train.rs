use dfc_core::circuit::ParamBounds;
use dfc_core::surrogate::SurrogateConfig;
use dfc_nn::{adam_step, AdamState, Gradients, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{GnnError, Result};
use crate::graph::{layout_to_graph, CircuitGraph};
use crate::model::{GatConfig, GatSurrogate, GraphBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateTrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            batch_size: 128,
            max_epochs: 500,
            lr: 1e-4,
            lr_decay: 0.5,
            decay_every: 200,
            patience: 25,
            val_fraction: 0.2,
        }
    }
}

impl SurrogateTrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_every == 0 || !(self.lr >= 0.0) {
            return Err(GnnError::Contract(format!("bad training config {self:?}")));
        }
        if self.patience >= self.max_epochs {
            return Err(GnnError::Contract(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(GnnError::Contract(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    /// Learning rate used in 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(((epoch.max(1) - 1) / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation L1 of predicting the training-set mean response everywhere.
    pub baseline_val_loss: f64,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainReport {
    pub fn relative_to_baseline(&self) -> f64 {
        self.best_val_loss / self.baseline_val_loss
    }
}

struct Prepared {
    graphs: Vec<CircuitGraph>,
    /// Per sample: real parts then imaginary parts.
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

fn prepare(data: &Dataset, bounds: &ParamBounds, coupling: &SurrogateConfig) -> Prepared {
    Prepared {
        graphs: data
            .samples
            .iter()
            .map(|s| layout_to_graph(&s.layout, bounds, coupling))
            .collect(),
        re: data.samples.iter().map(|s| s.s21.iter().map(|z| z.re).collect()).collect(),
        im: data.samples.iter().map(|s| s.s21.iter().map(|z| z.im).collect()).collect(),
    }
}

fn target(rows: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let p = rows[0].len();
    Tensor {
        shape: vec![idx.len(), p],
        values: idx.iter().flat_map(|&i| rows[i].iter().copied()).collect(),
    }
}

/// Mean absolute error over real and imaginary parts of the batch `idx`.
/// With `grad` set, the reverse pass is run as well.
fn batch_loss(model: &GatSurrogate, data: &Prepared, idx: &[usize], grad: bool) -> Result<(f64, Option<Gradients>)> {
    let graphs: Vec<&CircuitGraph> = idx.iter().map(|&i| &data.graphs[i]).collect();
    let batch = GraphBatch::new(&graphs);
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, &batch)?;
    let tre = tape.constant(target(&data.re, idx));
    let tim = tape.constant(target(&data.im, idx));
    let dre = tape.sub(f.re, tre)?;
    let dim = tape.sub(f.im, tim)?;
    let a = tape.abs_sum(dre);
    let b = tape.abs_sum(dim);
    let s = tape.add(a, b)?;
    let loss = tape.scale(s, 1.0 / (2 * idx.len() * model.n_points) as f64);
    let value = tape.value(loss).item();
    let grads = if grad { Some(tape.backward(loss)?) } else { None };
    Ok((value, grads))
}

fn eval_loss(model: &GatSurrogate, data: &Prepared, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(512) {
        total += batch_loss(model, data, chunk, false)?.0 * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

fn mean_baseline(data: &Prepared, train: &[usize], val: &[usize]) -> f64 {
    let p = data.re[0].len();
    let mean = |rows: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; p];
        for &i in train {
            for k in 0..p {
                m[k] += rows[i][k];
            }
        }
        m.iter().map(|v| v / train.len() as f64).collect()
    };
    let (mre, mim) = (mean(&data.re), mean(&data.im));
    let mut total = 0.0;
    for &i in val {
        for k in 0..p {
            total += (data.re[i][k] - mre[k]).abs() + (data.im[i][k] - mim[k]).abs();
        }
    }
    total / (2 * val.len() * p) as f64
}

/// Supervised L1 training with a fixed train/validation split, step decay
/// of the learning rate and early stopping. Returns the parameters of the
/// best validation epoch.
pub fn train_surrogate(
    data: &Dataset,
    bounds: &ParamBounds,
    coupling: &SurrogateConfig,
    model_cfg: GatConfig,
    cfg: &SurrogateTrainConfig,
    rng_seed: u64,
) -> Result<(GatSurrogate, TrainReport)> {
    cfg.check()?;
    if data.len() < 2 {
        return Err(GnnError::Contract(format!("need at least 2 samples, got {}", data.len())));
    }
    let prepared = prepare(data, bounds, coupling);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, data.len() - 1);
    let (val, train) = order.split_at(n_val);
    let (val, mut train) = (val.to_vec(), train.to_vec());

    let mut model = GatSurrogate::new(model_cfg, data.grid.n_points, rng_seed)?;
    let mut adam = AdamState::new(&model.store);
    let baseline_val_loss = mean_baseline(&prepared, &train, &val);
    let mut best = (f64::INFINITY, 0usize, model.store.clone());
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train.chunks(cfg.batch_size) {
            let (l, g) = batch_loss(&model, &prepared, chunk, true)?;
            if let Some(g) = g {
                g.accumulate(&mut model.store);
            }
            total += l * chunk.len() as f64;
            adam_step(&mut model.store, &mut adam, lr);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = eval_loss(&model, &prepared, &val)?;
        epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.store.clone());
        } else if epoch - best.1 >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    model.store = best.2;
    let report = TrainReport {
        epochs,
        best_epoch: best.1,
        best_val_loss: best.0,
        baseline_val_loss,
        stopped_early,
        n_train: train.len(),
        n_val: val.len(),
    };
    Ok((model, report))
}
