//! Heat-wavelet structural signatures.
//!
//! For each scale `s` the heat kernel `H_s = U·diag(e^{-sλ})·Uᵀ` of the
//! symmetrised combinatorial Laplacian is formed; column `a` holds the wavelet
//! coefficients of node `a`. Each node is then summarised by the empirical
//! characteristic function `φ_a(t) = (1/n)·Σ_m e^{i·t·H_s[m,a]}` sampled at
//! fixed points `t`, emitting all real parts then all imaginary parts per scale.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::NodeEmbeddings;
use crate::data::CascadeGraph;
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphWaveConfig {
    /// Explicit scales; empty selects them from the spectrum.
    pub scales: Vec<f64>,
    /// Scale count when selected automatically.
    pub num_scales: usize,
    pub sample_points: Vec<f64>,
}

impl Default for GraphWaveConfig {
    fn default() -> Self {
        Self { scales: Vec::new(), num_scales: 2, sample_points: linspace(0.0, 100.0, 16) }
    }
}

impl GraphWaveConfig {
    pub fn with_points(num_points: usize, max_t: f64) -> Self {
        Self { sample_points: linspace(0.0, max_t, num_points), ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        let scales = if self.scales.is_empty() { self.num_scales } else { self.scales.len() };
        2 * scales * self.sample_points.len()
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Scales spanning heat-kernel spread between 5% and 25% decay at the
/// smallest positive eigenvalue `λ₁`: `s = -ln(η)·sqrt(0.5/λ₁)` for
/// `η ∈ [0.95, 0.75]`.
pub fn auto_scales(eigenvalues: &[f64], count: usize) -> Vec<f64> {
    let l1 = eigenvalues.iter().copied().filter(|&l| l > 1e-10).fold(f64::INFINITY, f64::min);
    let l1 = if l1.is_finite() { l1 } else { 1.0 };
    let smin = -(0.95f64).ln() * (0.5 / l1).sqrt();
    let smax = -(0.75f64).ln() * (0.5 / l1).sqrt();
    linspace(smin, smax, count.max(1))
}

pub fn graphwave_embed(g: &CascadeGraph, cfg: &GraphWaveConfig) -> Result<NodeEmbeddings> {
    let n = g.len();
    if n == 0 {
        return Err(Error::InvalidArgument("graphwave needs a non-empty graph".into()));
    }
    let adj = g.symmetric_adjacency();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut deg = 0.0;
        for j in 0..n {
            let a = adj[i * n + j];
            if a != 0.0 {
                lap[(i, j)] = -a;
                deg += a;
            }
        }
        lap[(i, i)] = deg;
    }
    let eig = SymmetricEigen::new(lap);
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let scales = if cfg.scales.is_empty() { auto_scales(&lambdas, cfg.num_scales) } else { cfg.scales.clone() };
    if scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("graphwave scales must be positive".into()));
    }
    let u = &eig.eigenvectors;
    let points = &cfg.sample_points;
    let per_scale = 2 * points.len();
    let mut out = Mat::zeros(n, scales.len() * per_scale);
    let inv_n = 1.0 / n as f64;
    for (si, &s) in scales.iter().enumerate() {
        let filt: Vec<f64> = lambdas.iter().map(|&l| (-s * l).exp()).collect();
        // Heat kernel H = U diag(filt) Uᵀ.
        let mut scaled = u.clone();
        for (k, f) in filt.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*f);
        }
        let heat = &scaled * u.transpose();
        for a in 0..n {
            let col = heat.column(a);
            let base = si * per_scale;
            for (ti, &t) in points.iter().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for &psi in col.iter() {
                    let (sn, cs) = (t * psi).sin_cos();
                    re += cs;
                    im += sn;
                }
                out.set(a, base + ti, re * inv_n);
                out.set(a, base + points.len() + ti, im * inv_n);
            }
        }
    }
    Ok(NodeEmbeddings::new(g.nodes.clone(), out))
}
