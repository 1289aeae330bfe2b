//! Synthetic cascades from an exponential-kernel Hawkes process.
//!
//! Each cascade is generated through the branching (cluster) representation:
//! immigrant reshares of the root arrive at rate `μ·e^{-ωt}` and every
//! reshare spawns `Poisson(α)` children after `Exp(δ)` delays, each child
//! resharing from its parent's user. The conditional intensity is therefore
//! `λ(t) = μ·e^{-ωt} + Σ_{tᵢ<t} α·δ·e^{-δ(t - tᵢ)}`.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::cascade::{Cascade, RetweetEvent};
use crate::error::{Error, Result};
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub n_cascades: usize,
    /// Immigrant (direct reshare of the root) rate `μ` at `t = 0`.
    pub base_rate: f64,
    /// Expected children per event `α`; the kernel integrates to `α`.
    pub branching: f64,
    /// Kernel decay `δ`.
    pub decay: f64,
    pub horizon: f64,
    /// Decay `ω` of the immigrant rate; 0 keeps it constant.
    pub background_decay: f64,
    /// Log-normal spread of the per-cascade `μ` (0 disables).
    pub rate_spread: f64,
    /// Per-cascade `α` is uniform in `[α - s, α + s]`.
    pub branching_spread: f64,
    /// Log-normal spread of the per-cascade `ω` (0 disables).
    pub background_decay_spread: f64,
    /// Size of the shared user pool parent/child users are drawn from.
    pub num_users: usize,
    /// Zipf exponent for user activity in the pool.
    pub user_zipf: f64,
    /// Optional hard cap on events per cascade.
    pub max_events: Option<usize>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_cascades: 1000,
            base_rate: 0.5,
            branching: 0.8,
            decay: 1.0,
            horizon: 100.0,
            background_decay: 0.0,
            rate_spread: 0.0,
            branching_spread: 0.0,
            background_decay_spread: 0.0,
            num_users: 5000,
            user_zipf: 1.0,
            max_events: None,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let max_branching = self.branching + self.branching_spread;
        if !(max_branching < 1.0) {
            return Err(Error::Supercritical { branching: max_branching });
        }
        if self.branching < self.branching_spread || self.branching < 0.0 {
            return Err(Error::InvalidArgument("branching must be ≥ its spread and non-negative".into()));
        }
        if !(self.base_rate >= 0.0 && self.decay > 0.0 && self.horizon > 0.0 && self.background_decay >= 0.0) {
            return Err(Error::InvalidArgument("rates, decay and horizon must be positive".into()));
        }
        if self.num_users < 2 {
            return Err(Error::InvalidArgument("user pool needs at least two users".into()));
        }
        Ok(())
    }

    /// Expected number of non-root events for the homogeneous model
    /// (`ω = 0`, no spreads): `∫₀ᴴ m(t) dt` with
    /// `m(t) = μ/(1-α) - μα/(1-α)·e^{-δ(1-α)t}`.
    pub fn expected_events(&self) -> f64 {
        let (mu, a, d, h) = (self.base_rate, self.branching, self.decay, self.horizon);
        mu * h / (1.0 - a) - mu * a / (d * (1.0 - a).powi(2)) * (1.0 - (-d * (1.0 - a) * h).exp())
    }
}

struct UserPool {
    sampler: WeightedIndex<f64>,
    size: usize,
}

impl UserPool {
    fn new(size: usize, zipf: f64) -> Self {
        let weights: Vec<f64> = (0..size).map(|r| 1.0 / ((r + 1) as f64).powf(zipf)).collect();
        Self { sampler: WeightedIndex::new(weights).expect("positive weights"), size }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, used: &mut HashSet<usize>, fresh: &mut usize, cascade: usize) -> String {
        for _ in 0..64 {
            let u = self.sampler.sample(rng);
            if used.insert(u) {
                return format!("u{u}");
            }
        }
        // Pool nearly exhausted for this cascade: mint a one-off user.
        *fresh += 1;
        format!("u{}_{cascade}_{fresh}", self.size)
    }
}

pub fn simulate_hawkes_cascades(cfg: &SimulationConfig) -> Result<Vec<Cascade>> {
    cfg.validate()?;
    let pool = UserPool::new(cfg.num_users, cfg.user_zipf);
    (0..cfg.n_cascades).map(|i| simulate_one(cfg, &pool, i)).collect()
}

fn simulate_one(cfg: &SimulationConfig, pool: &UserPool, index: usize) -> Result<Cascade> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[index as u64]));
    let lognormal_factor = |rng: &mut ChaCha8Rng, spread: f64| -> f64 {
        if spread > 0.0 {
            LogNormal::new(-0.5 * spread * spread, spread).expect("valid spread").sample(rng)
        } else {
            1.0
        }
    };
    let mu = cfg.base_rate * lognormal_factor(&mut rng, cfg.rate_spread);
    let omega = cfg.background_decay * lognormal_factor(&mut rng, cfg.background_decay_spread);
    let alpha = if cfg.branching_spread > 0.0 {
        rng.random_range(cfg.branching - cfg.branching_spread..=cfg.branching + cfg.branching_spread)
    } else {
        cfg.branching
    };
    let h = cfg.horizon;
    let cap = cfg.max_events.unwrap_or(usize::MAX);

    let mut used = HashSet::new();
    let mut fresh = 0usize;
    let root = pool.draw(&mut rng, &mut used, &mut fresh, index);

    // Immigrants.
    let mass = if omega > 0.0 { mu * (1.0 - (-omega * h).exp()) / omega } else { mu * h };
    let n_imm = poisson(&mut rng, mass);
    let mut pending: Vec<(f64, String)> = Vec::new();
    for _ in 0..n_imm {
        let u: f64 = rng.random();
        let t = if omega > 0.0 { -(1.0 - u * (1.0 - (-omega * h).exp())).ln() / omega } else { u * h };
        pending.push((t, root.clone()));
    }
    pending.sort_by(|a, b| a.0.total_cmp(&b.0));

    let delay = Exp::new(cfg.decay).expect("positive decay");
    let mut events = Vec::new();
    let mut queue = std::collections::VecDeque::from(pending);
    while let Some((t, parent)) = queue.pop_front() {
        if events.len() >= cap {
            break;
        }
        let user = pool.draw(&mut rng, &mut used, &mut fresh, index);
        let children = poisson(&mut rng, alpha);
        for _ in 0..children {
            let tc = t + delay.sample(&mut rng);
            if tc <= h {
                queue.push_back((tc, user.clone()));
            }
        }
        events.push(RetweetEvent::new(parent, user, t));
    }
    let (c, _) = Cascade::from_raw(format!("c{index}"), root, events, Some(0.0))?;
    Ok(c)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite mean").sample(rng) as u64
}
