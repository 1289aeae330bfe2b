//! Mini-batch training with Adam, early stopping on validation MSLE and a
//! per-epoch log.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{metrics, predict_all};
use super::model::{CasftModel, Runtime};
use super::prepare::PreparedData;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, AdamConfig, ParamStore};
use crate::predictor::squared_log_error;
use crate::tape::Tape;
use crate::tensor::Mat;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample regression loss over the epoch.
    pub regression: f64,
    /// Mean per-sample generative (or segment) loss; zero when not trained.
    pub generative: f64,
    pub val_msle: Option<f64>,
    pub val_mape: Option<f64>,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    /// Train MSLE of the untrained model, by full inference.
    pub initial_train_msle: f64,
    pub best_epoch: usize,
    pub best_val_msle: Option<f64>,
    pub stopped_early: bool,
}

/// Builds a fresh model and its parameters from the config seed.
pub fn init_model(cfg: &ExperimentConfig) -> (CasftModel, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, &[0xbeef]));
    let model = CasftModel::new(cfg, &mut store, &mut rng);
    (model, store)
}

fn add_scaled(into: &mut [Mat], grads: &crate::tape::Gradients, scale: f64) {
    for (id, g) in grads.param_grads() {
        for (d, x) in into[id.0].data.iter_mut().zip(&g.data) {
            *d += scale * x;
        }
    }
}

/// Trains `store` in place. Returns the epoch history; with
/// `restore_best` the parameters of the best validation epoch are restored.
pub fn train(
    cfg: &ExperimentConfig,
    model: &CasftModel,
    store: &mut ParamStore,
    data: &PreparedData,
    rt: &Runtime,
) -> Result<TrainOutcome> {
    let tc = &cfg.train;
    if data.train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let initial = metrics(&predict_all(model, store, data, &data.train, rt)?)?.0;
    log::info!("epoch 0: train msle {initial:.4}");
    let mut adam = Adam::new(AdamConfig { lr: tc.lr, ..AdamConfig::default() }, store);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &[0x5f]));
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=tc.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle);
        let (mut reg_sum, mut gen_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(tc.batch_size).enumerate() {
            let mut grads = store.zeros_like();
            let inv = 1.0 / batch.len() as f64;
            for &idx in batch {
                let sample = &data.train[idx];
                let loss_seed = (tc.gamma > 0.0).then(|| derive_seed(tc.seed, &[epoch as u64, idx as u64, 2]));
                let ctx = rt.context(derive_seed(tc.seed, &[epoch as u64, idx as u64, 1]), loss_seed);
                let mut tape = Tape::new();
                let out = model.forward(&mut tape, store, sample, data.t_obs, &data.bounds, &ctx)?;
                let l1 = squared_log_error(&mut tape, sample.popularity, out.prediction);
                let loss = match out.aux_loss {
                    Some(l2) => {
                        gen_sum += tape.scalar(l2);
                        tape.lincomb(&[(inv, l1), (tc.gamma * inv, l2)])
                    }
                    None => tape.scale(l1, inv),
                };
                reg_sum += tape.scalar(l1);
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Divergence { epoch, batch: b });
                }
                add_scaled(&mut grads, &tape.backward(loss), 1.0);
            }
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            norm_sum += clip_global_norm(&mut grads, tc.clip_norm);
            adam.step(store, &grads);
            batches += 1;
        }
        let n = data.train.len() as f64;
        let (val_msle, val_mape) = if data.val.is_empty() {
            (None, None)
        } else {
            let (m, a) = metrics(&predict_all(model, store, data, &data.val, rt)?)?;
            (Some(m), Some(a))
        };
        let entry = EpochLog {
            epoch,
            regression: reg_sum / n,
            generative: gen_sum / n,
            val_msle,
            val_mape,
            grad_norm: norm_sum / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} gen {:.4} val msle {}",
            entry.regression,
            entry.generative,
            val_msle.map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.push(entry);

        if let Some(v) = val_msle {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if tc.patience > 0 && since_best >= tc.patience {
                    log::info!("early stop after epoch {epoch}");
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_val_msle, best_epoch) = match best {
        Some((v, e, params)) => {
            if tc.restore_best {
                *store = params;
            }
            (Some(v), e)
        }
        None => (None, history.len()),
    };
    Ok(TrainOutcome { history, initial_train_msle: initial, best_epoch, best_val_msle, stopped_early })
}
