//! Conditional denoising diffusion over the segmented popularity vector and
//! deterministic (DDIM) sampling.
//!
//! Targets live in a normalised space: `log₂(y + 1)` standardised per
//! coordinate with training statistics ([`Normalizer`]).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, ParamId, ParamStore};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown noise schedule `{other}` (linear, cosine)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    /// `β_1..β_K`
    pub betas: Vec<f64>,
    /// `ᾱ_0..ᾱ_K` with `ᾱ_0 = 1`.
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(k: usize, kind: ScheduleKind, beta_min: f64, beta_max: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("diffusion needs at least 2 steps, got {k}")));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!("need 0 < β_min ≤ β_max < 1, got ({beta_min}, {beta_max})")));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..k).map(|i| beta_min + (beta_max - beta_min) * i as f64 / (k - 1) as f64).collect(),
            ScheduleKind::Cosine => {
                let s = 0.008;
                let f = |i: usize| ((i as f64 / k as f64 + s) / (1.0 + s) * PI / 2.0).cos().powi(2);
                (1..=k).map(|i| (1.0 - f(i) / f(i - 1)).clamp(1e-8, 0.999)).collect()
            }
        };
        let mut alpha_bars = Vec::with_capacity(k + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().expect("seeded");
            alpha_bars.push(prev * (1.0 - b));
        }
        Ok(Self { kind, betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }
}

/// `Y^k = √ᾱ_k·Y⁰ + √(1-ᾱ_k)·ε`
pub fn forward_diffuse(y0: &[f64], k: usize, eps: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    y0.iter().zip(eps).map(|(y, e)| a * y + b * e).collect()
}

/// Per-coordinate standardisation of `log₂(y + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(targets: &[Vec<u64>]) -> Result<Self> {
        let Some(first) = targets.first() else {
            return Err(Error::InvalidArgument("cannot fit normaliser on no targets".into()));
        };
        let l = first.len();
        let n = targets.len() as f64;
        let logs: Vec<Vec<f64>> = targets.iter().map(|t| t.iter().map(|&y| log2p1(y as f64)).collect()).collect();
        let mean: Vec<f64> = (0..l).map(|j| logs.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..l)
            .map(|j| {
                let var = logs.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var.sqrt() < 1e-6 { 1.0 } else { var.sqrt() }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(l: usize) -> Self {
        Self { mean: vec![0.0; l], std: vec![1.0; l] }
    }

    pub fn normalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(j, &v)| (log2p1(v) - self.mean[j]) / self.std[j]).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(j, &v)| (v * self.std[j] + self.mean[j]).exp2() - 1.0).collect()
    }
}

fn log2p1(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Sinusoidal embedding of the diffusion step.
pub fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half.max(1) as f64);
        out[i] = (k as f64 * freq).sin();
        out[half + i] = (k as f64 * freq).cos();
    }
    out
}

/// Anything that predicts the noise in `Y^k` given step `k` and condition `c`.
pub trait NoisePredictor {
    fn predict_noise(&mut self, y: &[f64], k: usize, c: &[f64]) -> Vec<f64>;
}

/// Fully connected SiLU network `ε̂(Y^k, k, c)` with the condition
/// concatenated to every layer input and the step embedding to the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denoiser {
    pub layers: Vec<Linear>,
    pub target_dim: usize,
    pub cond_dim: usize,
    pub step_dim: usize,
}

impl Denoiser {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        target_dim: usize,
        cond_dim: usize,
        width: usize,
        depth: usize,
        step_dim: usize,
    ) -> Self {
        assert!(depth >= 1);
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = target_dim + step_dim + cond_dim;
        for i in 0..depth {
            let out = if i + 1 == depth { target_dim } else { width };
            layers.push(Linear::new(store, rng, &format!("denoiser.{i}"), fan_in, out));
            fan_in = out + cond_dim;
        }
        Self { layers, target_dim, cond_dim, step_dim }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    /// Rows of `y` and `c` are independent samples sharing step `k`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, y: Var, k: usize, c: Var) -> Var {
        let rows = tape.value(y).rows;
        let emb = step_embedding(k, self.step_dim);
        let emb = tape.constant(Mat::from_rows(&vec![emb; rows]));
        let mut h = tape.hcat(&[y, emb, c]);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h);
            if i < last {
                let a = tape.silu(h);
                h = tape.hcat(&[a, c]);
            }
        }
        h
    }

    /// Plain forward pass for a single sample.
    pub fn eval(&self, store: &ParamStore, y: &[f64], k: usize, c: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = y.iter().copied().chain(step_embedding(k, self.step_dim)).chain(c.iter().copied()).collect();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = Mat::row(x).matmul(store.get(layer.weight));
            let mut h: Vec<f64> = out.data.iter().zip(&store.get(layer.bias).data).map(|(a, b)| a + b).collect();
            if i < last {
                h.iter_mut().for_each(|v| *v *= sigmoid(*v));
                h.extend_from_slice(c);
            }
            x = h;
        }
        x
    }

    pub fn predictor<'a>(&'a self, store: &'a ParamStore) -> BoundDenoiser<'a> {
        BoundDenoiser { denoiser: self, store }
    }
}

pub struct BoundDenoiser<'a> {
    denoiser: &'a Denoiser,
    store: &'a ParamStore,
}

impl NoisePredictor for BoundDenoiser<'_> {
    fn predict_noise(&mut self, y: &[f64], k: usize, c: &[f64]) -> Vec<f64> {
        self.denoiser.eval(self.store, y, k, c)
    }
}

pub fn sample_noise(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `(k, ε)` for one training example.
pub fn draw_step(rng: &mut impl Rng, schedule: &NoiseSchedule, dim: usize) -> (usize, Vec<f64>) {
    let k = rng.random_range(1..=schedule.steps());
    (k, sample_noise(rng, dim))
}

/// `‖ε - ε̂(Y^k, k, c)‖²` on the tape, with the condition as a variable so
/// the loss reaches whatever produced it.
pub fn train_step_loss(
    tape: &mut Tape,
    store: &ParamStore,
    denoiser: &Denoiser,
    y0: &[f64],
    c: Var,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Var {
    let (k, eps) = draw_step(rng, schedule, y0.len());
    let yk = tape.row(forward_diffuse(y0, k, &eps, schedule));
    let pred = denoiser.forward(tape, store, yk, k, c);
    let target = tape.row(eps);
    let diff = tape.sub(pred, target);
    tape.sum_sq(diff)
}

/// The same objective for an arbitrary predictor, evaluated numerically.
pub fn train_step_loss_value(
    predictor: &mut impl NoisePredictor,
    y0: &[f64],
    c: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> f64 {
    let (k, eps) = draw_step(rng, schedule, y0.len());
    let yk = forward_diffuse(y0, k, &eps, schedule);
    let pred = predictor.predict_noise(&yk, k, c);
    pred.iter().zip(&eps).map(|(p, e)| (p - e).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdimOutput {
    /// Final `Y⁰` in normalised space.
    pub sample: Vec<f64>,
    /// `x̂₀` predicted at each visited step, from `K` downwards.
    pub trace: Vec<Vec<f64>>,
    /// Visited steps `τ_S > … > τ_1`.
    pub steps: Vec<usize>,
}

/// The `S`-step sub-schedule `τ_s = ⌊s·K/S⌋`, ascending.
pub fn ddim_timesteps(k: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 || s > k {
        return Err(Error::Config(format!("DDIM steps must be in 1..={k}, got {s}")));
    }
    let mut t: Vec<usize> = (1..=s).map(|i| i * k / s).collect();
    t.dedup();
    Ok(t)
}

/// Deterministic (η = 0) or stochastic DDIM sampling from `N(0, I)`.
pub fn ddim_sample(
    predictor: &mut impl NoisePredictor,
    c: &[f64],
    dim: usize,
    schedule: &NoiseSchedule,
    num_steps: usize,
    eta: f64,
    seed: u64,
) -> Result<DdimOutput> {
    let taus = ddim_timesteps(schedule.steps(), num_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = sample_noise(&mut rng, dim);
    let mut trace = Vec::with_capacity(taus.len());
    let mut visited = Vec::with_capacity(taus.len());
    for i in (0..taus.len()).rev() {
        let k = taus[i];
        let k_prev = if i == 0 { 0 } else { taus[i - 1] };
        let (ab, ab_prev) = (schedule.alpha_bar(k), schedule.alpha_bar(k_prev));
        let eps = predictor.predict_noise(&y, k, c);
        let x0: Vec<f64> = y.iter().zip(&eps).map(|(yv, e)| (yv - (1.0 - ab).sqrt() * e) / ab.sqrt()).collect();
        let sigma = if eta > 0.0 { eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt() } else { 0.0 };
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let noise = if sigma > 0.0 { sample_noise(&mut rng, dim) } else { vec![0.0; dim] };
        y = (0..dim).map(|j| ab_prev.sqrt() * x0[j] + dir * eps[j] + sigma * noise[j]).collect();
        trace.push(x0);
        visited.push(k);
    }
    Ok(DdimOutput { sample: y, trace, steps: visited })
}
