//! Feature-based MLP baseline trained with the regression loss alone.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{metrics, EvalReport};
use super::prepare::{PreparedData, PreparedSample, NUM_BASELINE_FEATURES};
use crate::data::SplitName;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, AdamConfig, ParamStore};
use crate::predictor::{squared_log_error, PredictionHead, PredictionRecord};
use crate::tape::Tape;
use crate::util::derive_seed;

type Features = [f64; NUM_BASELINE_FEATURES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBaseline {
    pub mean: Features,
    pub std: Features,
    pub head: PredictionHead,
}

impl FeatureBaseline {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, train: &[PreparedSample], width: usize) -> Self {
        let n = train.len().max(1) as f64;
        let mut mean = [0.0; NUM_BASELINE_FEATURES];
        let mut std = [0.0; NUM_BASELINE_FEATURES];
        for s in train {
            for (m, x) in mean.iter_mut().zip(&s.baseline) {
                *m += x / n;
            }
        }
        for s in train {
            for ((v, x), m) in std.iter_mut().zip(&s.baseline).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        for v in &mut std {
            *v = if v.sqrt() < 1e-6 { 1.0 } else { v.sqrt() };
        }
        let head = PredictionHead::new(store, rng, "baseline", NUM_BASELINE_FEATURES, width);
        Self { mean, std, head }
    }

    fn inputs(&self, f: &Features) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn predict(&self, store: &ParamStore, f: &Features) -> f64 {
        let mut tape = Tape::new();
        let x = tape.row(self.inputs(f));
        let p = self.head.forward(&mut tape, store, x);
        tape.scalar(p)
    }

    pub fn predict_all(&self, store: &ParamStore, samples: &[PreparedSample]) -> Vec<PredictionRecord> {
        samples
            .iter()
            .map(|s| PredictionRecord { cascade_id: s.cascade_id.clone(), popularity: s.popularity, predicted: self.predict(store, &s.baseline) })
            .collect()
    }
}

/// Trains the baseline with the main run's optimiser settings and reports
/// test metrics.
pub fn baseline_feature_mlp(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(FeatureBaseline, ParamStore, EvalReport)> {
    let tc = &cfg.train;
    if data.train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, &[0xba5e]));
    let model = FeatureBaseline::new(&mut store, &mut rng, &data.train, cfg.model.head_width);
    let mut adam = Adam::new(AdamConfig { lr: tc.lr, ..AdamConfig::default() }, &store);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(tc.batch_size).enumerate() {
            let mut grads = store.zeros_like();
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &data.train[i];
                let mut tape = Tape::new();
                let x = tape.row(model.inputs(&s.baseline));
                let p = model.head.forward(&mut tape, &store, x);
                let l = squared_log_error(&mut tape, s.popularity, p);
                let loss = tape.scale(l, inv);
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Divergence { epoch, batch: b });
                }
                for (id, g) in tape.backward(loss).param_grads() {
                    grads[id.0].add_assign(g);
                }
            }
            clip_global_norm(&mut grads, tc.clip_norm);
            adam.step(&mut store, &grads);
        }
        if !data.val.is_empty() {
            let v = metrics(&model.predict_all(&store, &data.val))?.0;
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if tc.patience > 0 && since_best >= tc.patience {
                    break;
                }
            }
        }
    }
    if let (true, Some((_, params))) = (tc.restore_best, best) {
        store = params;
    }
    let split = if data.test.is_empty() { SplitName::Train } else { SplitName::Test };
    let records = model.predict_all(&store, data.part(split));
    let (msle, mape) = metrics(&records)?;
    let report = EvalReport { msle, mape, count: records.len(), split, config_hash: cfg.hash() };
    Ok((model, store, report))
}
