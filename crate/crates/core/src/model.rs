//! Fitting either model on a month range and turning its predictions into
//! trading forecasts.

use serde::{Deserialize, Serialize};

use crate::backtest::ForecastEvent;
use crate::bayes::{BayesPosterior, BayesPrior, BayesPriorConfig};
use crate::checkpoint::{network_checkpoint, network_from_checkpoint, Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::net::{train, CovarianceMode, DatasetView, NetworkConfig, NetworkParams, TrainConfig, TrainHistory};
use crate::sampler::Dataset;
use crate::seed::derive_seed;
use crate::uncertainty::{mc_predict, DEFAULT_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mlp-diag")]
    MlpDiag,
    #[serde(rename = "mlp-full")]
    MlpFull,
    #[serde(rename = "bayes")]
    Bayes,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::MlpDiag => "mlp-diag",
            ModelKind::MlpFull => "mlp-full",
            ModelKind::Bayes => "bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Layer sizes, dropout and L2; contracts, window length, covariance
    /// mode and seed are filled in from the data and the kind.
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub bayes: BayesPriorConfig,
    pub mc_samples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::MlpDiag,
            network: NetworkConfig::default(),
            training: TrainConfig::default(),
            bayes: BayesPriorConfig::default(),
            mc_samples: DEFAULT_SAMPLES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind != ModelKind::Bayes && self.mc_samples < 2 {
            return Err(Error::Config("uncertainty.samples must be at least 2".into()));
        }
        Ok(())
    }

    /// The network config for `dataset` and a given seed.
    pub fn network_for(&self, contracts: usize, window_len: usize, seed: u64) -> NetworkConfig {
        NetworkConfig {
            contracts,
            window_len,
            covariance_mode: if self.kind == ModelKind::MlpFull {
                CovarianceMode::Full
            } else {
                CovarianceMode::Diagonal
            },
            seed,
            ..self.network.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Network {
        params: NetworkParams,
        history: TrainHistory,
    },
    Bayes(BayesPosterior),
}

impl TrainedModel {
    pub fn contracts(&self) -> usize {
        match self {
            TrainedModel::Network { params, .. } => params.config.contracts,
            TrainedModel::Bayes(p) => p.prior.outputs(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Network { params, .. } => params.config.input_dim(),
            TrainedModel::Bayes(p) => p.prior.features() - 1,
        }
    }

    pub fn to_checkpoint(&self, seeds: &[(&str, u64)]) -> Result<Checkpoint> {
        match self {
            TrainedModel::Network { params, history } => network_checkpoint(params, Some(history), seeds),
            TrainedModel::Bayes(p) => {
                let mut ck = p.to_checkpoint();
                for (k, v) in seeds {
                    ck.seeds.insert((*k).into(), *v);
                }
                Ok(ck)
            }
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.kind {
            CheckpointKind::Network => {
                let params = network_from_checkpoint(ck)?;
                let history = if ck.meta.is_null() {
                    TrainHistory::default()
                } else {
                    serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Format(format!("history: {e}")))?
                };
                Ok(TrainedModel::Network { params, history })
            }
            CheckpointKind::Bayes => Ok(TrainedModel::Bayes(BayesPosterior::from_checkpoint(ck)?)),
        }
    }
}

/// Trains on `train_idx`, early-stopping on `val_idx` for the network.
/// The Bayesian baseline fits the training rows only.
pub fn fit_model(dataset: &Dataset, train_idx: &[usize], val_idx: &[usize], cfg: &ModelConfig, seed: u64) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Data("no training samples in the training months".into()));
    }
    match cfg.kind {
        ModelKind::MlpDiag | ModelKind::MlpFull => {
            if val_idx.is_empty() {
                return Err(Error::Data("no validation samples in the validation month".into()));
            }
            let net_cfg = cfg.network_for(dataset.contracts, dataset.window_len, derive_seed(seed, &["init"]));
            let init = NetworkParams::init(&net_cfg)?;
            let train_cfg = TrainConfig {
                seed: derive_seed(seed, &["train"]),
                ..cfg.training.clone()
            };
            let tr = DatasetView {
                dataset,
                indices: train_idx.to_vec(),
            };
            let va = DatasetView {
                dataset,
                indices: val_idx.to_vec(),
            };
            let (params, history) = train(init, &tr, &va, &train_cfg)?;
            Ok(TrainedModel::Network { params, history })
        }
        ModelKind::Bayes => {
            let p = dataset.input_dim() + 1;
            let prior = BayesPrior::weak(p, dataset.contracts, &cfg.bayes);
            let mut post = BayesPosterior::new(prior)?;
            const CHUNK: usize = 1024;
            let mut design = Vec::with_capacity(CHUNK * p);
            let mut targets = Vec::with_capacity(CHUNK * dataset.contracts);
            for rows in train_idx.chunks(CHUNK) {
                design.clear();
                targets.clear();
                for &i in rows {
                    let start = design.len();
                    design.resize(start + p, 1.0);
                    dataset.write_input(i, &mut design[start..start + p - 1]);
                    targets.extend(dataset.target(i));
                }
                post.add_rows(&design, &targets)?;
            }
            post.refresh()?;
            Ok(TrainedModel::Bayes(post))
        }
    }
}

/// Mask seed of one prediction: tied to the sample's anchor time so it
/// does not depend on batching.
pub fn mask_seed(seed: u64, anchor_time: i64) -> u64 {
    derive_seed(seed, &["mc", &anchor_time.to_string()])
}

/// Forecast events for samples `idx`, in dataset order.
pub fn forecast(dataset: &Dataset, idx: &[usize], model: &TrainedModel, mc_samples: usize, seed: u64) -> Result<Vec<ForecastEvent>> {
    let c = dataset.contracts;
    if model.contracts() != c {
        return Err(Error::shape("model contracts vs dataset contracts", model.contracts(), c));
    }
    if model.input_dim() != dataset.input_dim() {
        return Err(Error::shape("model input width vs dataset window", model.input_dim(), dataset.input_dim()));
    }
    let d = dataset.input_dim();
    let mut events = Vec::with_capacity(idx.len());
    const CHUNK: usize = 512;
    let mut inputs = vec![0.0; CHUNK * d];
    for rows in idx.chunks(CHUNK) {
        for (k, &i) in rows.iter().enumerate() {
            dataset.write_input(i, &mut inputs[k * d..(k + 1) * d]);
        }
        let x = &inputs[..rows.len() * d];
        // Normalized (mean, aleatoric variance, total variance) per row.
        let preds: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = match model {
            TrainedModel::Network { params, .. } => {
                let seeds: Vec<u64> = rows.iter().map(|&i| mask_seed(seed, dataset.anchor_time(i))).collect();
                mc_predict(params, x, &seeds, mc_samples)?
                    .into_iter()
                    .map(|u| {
                        (
                            u.mu_hat.iter().copied().collect(),
                            u.sigma_a_hat.diagonal().iter().copied().collect(),
                            u.sigma_total.diagonal().iter().copied().collect(),
                        )
                    })
                    .collect()
            }
            TrainedModel::Bayes(post) => {
                let mut row = vec![1.0; d + 1];
                let mut out = Vec::with_capacity(rows.len());
                for k in 0..rows.len() {
                    row[..d].copy_from_slice(&x[k * d..(k + 1) * d]);
                    let p = post.predictive(&row)?;
                    out.push((
                        p.mean.iter().copied().collect(),
                        p.noise.diagonal().iter().copied().collect(),
                        p.variance.diagonal().iter().copied().collect(),
                    ));
                }
                out
            }
        };
        for (&i, (mu, var_a, var_t)) in rows.iter().zip(preds) {
            let norm = dataset.norm(i);
            let last = dataset.last_raw(i);
            let target = dataset.raw_target(i);
            events.push(ForecastEvent {
                anchor_time: dataset.anchor_time(i),
                day: dataset.day_of(i),
                month: dataset.month_of(i),
                predicted: (0..c).map(|k| norm.denormalize(k, mu[k]) - last[k]).collect(),
                realized: Some((0..c).map(|k| target[k] - last[k]).collect()),
                sigma_rlsd: dataset.realized_vol(i),
                sigma_alea: var_a.iter().map(|v| norm.scale * v.sqrt()).collect(),
                sigma_alep: var_t.iter().map(|v| norm.scale * v.sqrt()).collect(),
            });
        }
    }
    Ok(events)
}
