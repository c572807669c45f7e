//! Mini-batch training with early stopping on a validation set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::mlp::{backward, forward_heads, mean_nll, Batch, Mode, NetworkParams};
use crate::error::{Error, Result};
use crate::sampler::Dataset;
use crate::seed::derive_seed;

/// Anything that can fill rows of normalized inputs and targets.
pub trait TrainingData {
    fn len(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn fill(&self, row: usize, input: &mut [f64], target: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fully materialized inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryData {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl TrainingData for InMemoryData {
    fn len(&self) -> usize {
        self.targets.len() / self.output_dim
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn fill(&self, row: usize, input: &mut [f64], target: &mut [f64]) {
        input.copy_from_slice(&self.inputs[row * self.input_dim..(row + 1) * self.input_dim]);
        target.copy_from_slice(&self.targets[row * self.output_dim..(row + 1) * self.output_dim]);
    }
}

/// A subset of dataset samples, normalized on the fly.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    pub dataset: &'a Dataset,
    pub indices: Vec<usize>,
}

impl TrainingData for DatasetView<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn input_dim(&self) -> usize {
        self.dataset.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.dataset.contracts
    }
    fn fill(&self, row: usize, input: &mut [f64], target: &mut [f64]) {
        let i = self.indices[row];
        self.dataset.write_input(i, input);
        target.copy_from_slice(&self.dataset.target(i));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub adam: AdamConfig,
    /// Drives batch shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            patience: 15,
            max_epochs: 500,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Patience rule on validation loss: stop once `patience` consecutive epochs
/// fail to strictly improve on the best value seen.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records an epoch's validation loss. Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

fn gather(data: &dyn TrainingData, rows: &[usize], inputs: &mut Vec<f64>, targets: &mut Vec<f64>) {
    let (d, c) = (data.input_dim(), data.output_dim());
    inputs.resize(rows.len() * d, 0.0);
    targets.resize(rows.len() * c, 0.0);
    for (k, &r) in rows.iter().enumerate() {
        data.fill(r, &mut inputs[k * d..(k + 1) * d], &mut targets[k * c..(k + 1) * c]);
    }
}

/// Mean loss plus weight penalty over a data set, evaluated without dropout.
pub fn evaluate(params: &NetworkParams, data: &dyn TrainingData, chunk: usize) -> Result<f64> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let n = data.len();
    let mut total = 0.0;
    let rows: Vec<usize> = (0..n).collect();
    for part in rows.chunks(chunk.max(1)) {
        gather(data, part, &mut inputs, &mut targets);
        let heads = forward_heads(params, &inputs, part.len(), Mode::Eval)?;
        total += mean_nll(params, &heads, &targets) * part.len() as f64;
    }
    Ok(total / n as f64 + params.config.l2_lambda * params.weight_penalty())
}

/// Trains from `init`, returning the best-validation parameters.
pub fn train(
    init: NetworkParams,
    train_set: &dyn TrainingData,
    val_set: &dyn TrainingData,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let in_dim = init.config.input_dim();
    for (name, d) in [("training", train_set), ("validation", val_set)] {
        if d.input_dim() != in_dim {
            return Err(Error::shape(format!("{name} input width"), in_dim, d.input_dim()));
        }
        if d.output_dim() != init.config.contracts {
            return Err(Error::shape(format!("{name} target width"), init.config.contracts, d.output_dim()));
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut params = init;
    let mut best = params.clone();
    let mut adam = AdamState::new(cfg.adam, params.len());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["shuffle", &epoch.to_string()]));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            gather(train_set, rows, &mut inputs, &mut targets);
            let mask_seed = derive_seed(cfg.seed, &["mask", &epoch.to_string(), &b.to_string()]);
            let batch = Batch {
                inputs: &inputs,
                targets: &targets,
                len: rows.len(),
            };
            let (obj, grads) = match backward(&params, batch, Mode::Train { mask_seed }) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, history }),
                Err(e) => return Err(e),
            };
            if !obj.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, history });
            }
            sum += obj * rows.len() as f64;
            adam.step(&mut params.values, &grads)?;
        }
        let train_loss = sum / train_set.len() as f64;
        let val_loss = match evaluate(&params, val_set, cfg.batch_size) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, history }),
            Err(e) => return Err(e),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        let (improved, stop) = stopper.update(epoch, val_loss);
        if improved {
            best = params.clone();
        }
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    Ok((best, history))
}
