//! The assembled predictor and its per-sample forward pass, shared by
//! training and inference.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use super::prepare::PreparedSample;
use crate::attention::DualAttention;
use crate::diffusion::{ddim_sample, train_step_loss, Denoiser, NoiseSchedule};
use crate::dynamics::{EncodeOptions, OdeDynamics};
use crate::error::Result;
use crate::nn::{Activation, Mlp, ParamId, ParamStore};
use crate::predictor::PredictionHead;
use crate::tape::{Tape, Var};
use crate::util::{derive_seed, str_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasftModel {
    pub variant: Variant,
    pub attention: DualAttention,
    pub dynamics: Option<OdeDynamics>,
    pub denoiser: Option<Denoiser>,
    /// Segment regressor of the `fm` variant.
    pub trend_mlp: Option<Mlp>,
    pub head: PredictionHead,
    pub intervals: usize,
}

/// What a forward pass produced for one sample.
pub struct SampleOutput {
    pub prediction: Var,
    /// Generative (or segment-regression) loss term, when computed.
    pub aux_loss: Option<Var>,
    /// Trend vector fed to the head, in normalised space.
    pub trend: Option<Vec<f64>>,
}

/// How the trend generator is driven during one pass.
pub struct PassContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub opts: EncodeOptions,
    pub ddim_steps: usize,
    pub eta: f64,
    pub num_samples: usize,
    /// Seed for DDIM starting noise; mixed with the cascade id.
    pub sample_seed: u64,
    /// Seed for the diffusion training draw, if the auxiliary loss is wanted.
    pub loss_seed: Option<u64>,
    pub ddim_calls: &'a Cell<usize>,
}

/// Schedule, solver options and the DDIM call counter for a run.
pub struct Runtime {
    pub schedule: NoiseSchedule,
    pub opts: EncodeOptions,
    pub ddim_steps: usize,
    pub eta: f64,
    pub num_samples: usize,
    pub ddim_calls: Cell<usize>,
}

impl Runtime {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let d = &cfg.diff;
        let mut opts = EncodeOptions::new(cfg.ode.spec(), cfg.time_scale()?);
        opts.cue_mode = cfg.ode.cue_mode;
        Ok(Self {
            schedule: NoiseSchedule::new(d.k, d.schedule, d.beta_min, d.beta_max)?,
            opts,
            ddim_steps: d.ddim_steps,
            eta: d.eta,
            num_samples: d.num_samples,
            ddim_calls: Cell::new(0),
        })
    }

    pub fn context(&self, sample_seed: u64, loss_seed: Option<u64>) -> PassContext<'_> {
        PassContext {
            schedule: &self.schedule,
            opts: self.opts,
            ddim_steps: self.ddim_steps,
            eta: self.eta,
            num_samples: self.num_samples,
            sample_seed,
            loss_seed,
            ddim_calls: &self.ddim_calls,
        }
    }
}

impl CasftModel {
    pub fn new(cfg: &ExperimentConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let m = &cfg.model;
        let l = cfg.data.intervals;
        let attention = DualAttention::new(store, rng, m.d_c, m.d_g, m.d_attn, m.pooling);
        let variant = m.variant;
        let dynamics = variant.uses_ode().then(|| OdeDynamics::new(store, rng, attention.out_dim(), m.d_h));
        // Representation of the observed cascade and the diffusion condition.
        let (repr_dim, cond_dim) = if variant.uses_ode() { (m.d_h, m.d_h + l) } else { (attention.out_dim(), attention.out_dim()) };
        let denoiser = variant.uses_diffusion().then(|| {
            let d = &cfg.diff;
            Denoiser::new(store, rng, l, cond_dim, d.width, d.depth, d.step_dim)
        });
        let trend_mlp =
            (variant == Variant::Fm).then(|| Mlp::new(store, rng, "fm", &[repr_dim, m.fm_width, l], Activation::Relu));
        let head_in = match variant {
            Variant::Full | Variant::NoOde | Variant::Fm => l + repr_dim,
            Variant::NoFt => repr_dim,
            Variant::NoDiffusion => cond_dim,
        };
        let head = PredictionHead::new(store, rng, "head", head_in, m.head_width);
        Self { variant, attention, dynamics, denoiser, trend_mlp, head, intervals: l }
    }

    pub fn denoiser_params(&self) -> Vec<ParamId> {
        self.denoiser.as_ref().map(Denoiser::params).unwrap_or_default()
    }

    /// Encodes one sample, generates its trend and predicts its popularity.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &PreparedSample,
        t_obs: f64,
        bounds: &[f64],
        ctx: &PassContext<'_>,
    ) -> Result<SampleOutput> {
        let feats = self.attention.forward(tape, store, &sample.tokens)?;
        let (repr, cond) = match &self.dynamics {
            Some(dynamics) => {
                let out = dynamics.encode(tape, store, feats, &sample.times, t_obs, bounds, &ctx.opts)?;
                let c = tape.hcat(&[out.h_to, out.cues]);
                (out.h_to, c)
            }
            None => {
                let last = tape.value(feats).rows - 1;
                let s = tape.row_of(feats, last);
                (s, s)
            }
        };
        let mut aux_loss = None;
        let mut trend = None;
        let head_input = match self.variant {
            Variant::NoFt => repr,
            Variant::NoDiffusion => cond,
            Variant::Fm => {
                let mlp = self.trend_mlp.as_ref().expect("fm regressor");
                let y_hat = mlp.forward(tape, store, repr);
                if ctx.loss_seed.is_some() {
                    let target = tape.row(sample.target.clone());
                    let diff = tape.sub(y_hat, target);
                    aux_loss = Some(tape.sum_sq(diff));
                }
                trend = Some(tape.value(y_hat).data.clone());
                tape.hcat(&[y_hat, repr])
            }
            Variant::Full | Variant::NoOde => {
                let denoiser = self.denoiser.as_ref().expect("denoiser");
                let schedule = ctx.schedule;
                if let Some(seed) = ctx.loss_seed {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    aux_loss = Some(train_step_loss(tape, store, denoiser, &sample.target, cond, schedule, &mut rng));
                }
                let c = tape.value(cond).data.clone();
                let y0 = self.sample_trend(store, &c, &sample.cascade_id, ctx)?;
                let y0v = tape.row(y0.clone());
                trend = Some(y0);
                tape.hcat(&[y0v, repr])
            }
        };
        let prediction = self.head.forward(tape, store, head_input);
        Ok(SampleOutput { prediction, aux_loss, trend })
    }

    /// Mean of `num_samples` DDIM draws in normalised space.
    fn sample_trend(&self, store: &ParamStore, c: &[f64], id: &str, ctx: &PassContext<'_>) -> Result<Vec<f64>> {
        let denoiser = self.denoiser.as_ref().expect("denoiser");
        let mut acc = vec![0.0; self.intervals];
        for j in 0..ctx.num_samples {
            let seed = derive_seed(ctx.sample_seed, &[str_seed(id), j as u64]);
            let out = ddim_sample(&mut denoiser.predictor(store), c, self.intervals, ctx.schedule, ctx.ddim_steps, ctx.eta, seed)?;
            ctx.ddim_calls.set(ctx.ddim_calls.get() + 1);
            for (a, v) in acc.iter_mut().zip(&out.sample) {
                *a += v / ctx.num_samples as f64;
            }
        }
        Ok(acc)
    }

    /// Inference-only prediction.
    pub fn predict(
        &self,
        store: &ParamStore,
        sample: &PreparedSample,
        t_obs: f64,
        bounds: &[f64],
        ctx: &PassContext<'_>,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, sample, t_obs, bounds, ctx)?;
        Ok((tape.scalar(out.prediction), out.trend))
    }
}
