//! Prediction head, losses and evaluation metrics.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::util::pairwise_sum;

/// `P̂ = softplus(MLP(x))` over the concatenated head inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionHead {
    pub mlp: Mlp,
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, width: usize) -> Self {
        Self { mlp: Mlp::new(store, rng, name, &[d_in, width, 1], Activation::Relu) }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mlp.params()
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.layers[0].fan_in
    }

    /// `x` is `1 x d_in`; returns the `1 x 1` prediction.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let pre = self.mlp.forward(tape, store, x);
        tape.softplus(pre)
    }

    /// `P̂` for the trend `y0` and state `h_to`, fused by concatenation.
    pub fn predict(&self, store: &ParamStore, y0: &[f64], h_to: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let x = tape.row(y0.iter().chain(h_to).copied().collect());
        let p = self.forward(&mut tape, store, x);
        tape.scalar(p)
    }
}

fn check(p: &[f64], p_hat: &[f64]) -> Result<()> {
    if p.len() != p_hat.len() {
        return Err(Error::InvalidArgument(format!("{} targets vs {} predictions", p.len(), p_hat.len())));
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one pair".into()));
    }
    if p.iter().chain(p_hat).any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidArgument("popularity values must be non-negative".into()));
    }
    Ok(())
}

/// `(1/M)·Σ (log₂(P+1) - log₂(P̂+1))²`
pub fn msle(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    check(p, p_hat)?;
    let terms: Vec<f64> = p.iter().zip(p_hat).map(|(&a, &b)| ((a + 1.0).log2() - (b + 1.0).log2()).powi(2)).collect();
    Ok(pairwise_sum(&terms) / p.len() as f64)
}

/// `(1/M)·Σ |log₂(P+2) - log₂(P̂+2)| / log₂(P+2)`
pub fn mape(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    check(p, p_hat)?;
    let terms: Vec<f64> = p
        .iter()
        .zip(p_hat)
        .map(|(&a, &b)| ((a + 2.0).log2() - (b + 2.0).log2()).abs() / (a + 2.0).log2())
        .collect();
    Ok(pairwise_sum(&terms) / p.len() as f64)
}

/// Training regression loss; the same formula as [`msle`].
pub fn regression_loss(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    msle(p, p_hat)
}

/// `(log₂(P+1) - log₂(P̂+1))²` for one sample on the tape.
pub fn squared_log_error(tape: &mut Tape, p: f64, p_hat: Var) -> Var {
    let lp = tape.log2p1(p_hat);
    let shifted = tape.affine(lp, 1.0, -(p + 1.0).log2());
    tape.sum_sq(shifted)
}

pub fn total_loss(l1: f64, l2: f64, gamma: f64) -> f64 {
    l1 + gamma * l2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub regression: f64,
    pub generative: f64,
    pub gamma: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(regression: f64, generative: f64, gamma: f64) -> Self {
        Self { regression, generative, gamma, total: total_loss(regression, generative, gamma) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cascade_id: String,
    pub popularity: f64,
    pub predicted: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn metric_examples() {
        assert_eq!(msle(&[3.0], &[1.0]).unwrap(), 1.0);
        assert!((mape(&[6.0], &[2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(msle(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(mape(&[0.0], &[0.0]).unwrap(), 0.0);
        let p = [0.0, 4.0, 17.0, 250.0];
        assert_eq!(msle(&p, &p).unwrap(), 0.0);
        assert_eq!(mape(&p, &p).unwrap(), 0.0);
        assert!(msle(&[-1.0], &[0.0]).is_err());
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn metric_symmetry_and_permutation() {
        let (a, b) = ([3.0, 10.0, 0.0], [1.0, 2.0, 5.0]);
        assert_eq!(msle(&a, &b).unwrap(), msle(&b, &a).unwrap());
        assert_ne!(mape(&[6.0], &[2.0]).unwrap(), mape(&[2.0], &[6.0]).unwrap());
        let (pa, pb) = ([0.0, 3.0, 10.0], [5.0, 1.0, 2.0]);
        assert!((msle(&a, &b).unwrap() - msle(&pa, &pb).unwrap()).abs() < 1e-15);
        assert!((mape(&a, &b).unwrap() - mape(&pa, &pb).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn regression_loss_is_msle() {
        let (a, b) = ([3.0, 7.5, 1.0], [1.0, 0.0, 9.0]);
        assert_eq!(regression_loss(&a, &b).unwrap().to_bits(), msle(&a, &b).unwrap().to_bits());
        assert_eq!(regression_loss(&[3.0], &[1.0]).unwrap(), 1.0);
        let dup = |v: &[f64]| v.iter().chain(v).copied().collect::<Vec<_>>();
        assert!((regression_loss(&dup(&a), &dup(&b)).unwrap() - regression_loss(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn total_loss_weights() {
        assert_eq!(total_loss(1.5, 2.0, 0.0), 1.5);
        assert_eq!(total_loss(1.5, 2.0, 0.5), 2.5);
        let f = |g| total_loss(0.7, 3.0, g);
        assert!(((f(0.2) - f(0.1)) - (f(0.3) - f(0.2))).abs() < 1e-12);
    }

    fn head(seed: u64, d_in: usize) -> (ParamStore, PredictionHead) {
        let mut store = ParamStore::new();
        let h = PredictionHead::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), "head", d_in, 64);
        (store, h)
    }

    #[test]
    fn zero_head_predicts_softplus_of_bias() {
        let (mut store, h) = head(1, 8);
        for id in h.params() {
            store.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        assert!((h.predict(&store, &[1.0; 4], &[2.0; 4]) - 2f64.ln()).abs() < 1e-15);
        store.get_mut(h.mlp.output().bias).data[0] = 10.0;
        assert!((h.predict(&store, &[1.0; 4], &[2.0; 4]) - 10.0).abs() < 1e-4);
        // Monotone in the output bias.
        let mut last = 0.0;
        for b in [-5.0, -1.0, 0.0, 2.0, 7.0] {
            store.get_mut(h.mlp.output().bias).data[0] = b;
            let p = h.predict(&store, &[1.0; 4], &[2.0; 4]);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn head_matches_matrix_oracle() {
        let (mut store, h) = head(2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for id in h.params() {
            store.get_mut(id).data.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        }
        let y0 = [0.5, 1.0, -0.3, 2.0];
        let hto = [0.1, -0.2, 0.3, 0.0];
        let x: Vec<f64> = y0.iter().chain(&hto).copied().collect();
        let (l0, l1) = (&h.mlp.layers[0], &h.mlp.layers[1]);
        let (w0, b0, w1, b1) = (store.get(l0.weight), store.get(l0.bias), store.get(l1.weight), store.get(l1.bias));
        let mut out = b1.data[0];
        for j in 0..64 {
            let a = (0..8).map(|i| x[i] * w0.get(i, j)).sum::<f64>() + b0.data[j];
            out += a.max(0.0) * w1.get(j, 0);
        }
        let want = if out > 30.0 { out } else { out.exp().ln_1p() };
        assert!((h.predict(&store, &y0, &hto) - want).abs() < 1e-6);
    }

    #[test]
    fn tape_log_error_matches_metric() {
        let mut tape = Tape::new();
        let p_hat = tape.row(vec![1.0]);
        let l = squared_log_error(&mut tape, 3.0, p_hat);
        assert!((tape.scalar(l) - 1.0).abs() < 1e-15);
    }
}
