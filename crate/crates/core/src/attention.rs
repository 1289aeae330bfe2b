//! Temporal encoding, prefix sub-sequences and the dual self-attention that
//! turns an observed cascade into one fused feature vector per event.
//!
//! Sub-sequence `j` is the prefix of events `0..=j`. With last-token pooling
//! its summary is row `j` of one causally masked attention pass over the
//! whole sequence, which is what [`SelfAttention::forward`] computes.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CascadeSequence;
use crate::embed::NodeEmbeddings;
use crate::error::{Error, Result};
use crate::nn::{glorot, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

/// Alternating cos/sin encoding of `t`; entry `k` (0-based) is
/// `cos(t / 10000^{k/B})` for even `k` and `sin(t / 10000^{(k+1)/B})` for odd `k`.
pub fn temporal_encode(t: f64, b: usize) -> Result<Vec<f64>> {
    if b == 0 || b % 2 != 0 {
        return Err(Error::Config(format!("temporal encoding width must be even and positive, got {b}")));
    }
    let bf = b as f64;
    Ok((0..b)
        .map(|k| {
            if k % 2 == 0 {
                (t / 10000f64.powf(k as f64 / bf)).cos()
            } else {
                (t / 10000f64.powf((k + 1) as f64 / bf)).sin()
            }
        })
        .collect())
}

/// Token matrices for all prefixes of one cascade sequence. Prefix `j`
/// consists of rows `0..=j` of each matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSequenceBatch {
    /// `z(t_i) + E_c(u_i)` per event.
    pub local_inputs: Mat,
    /// `E_g(u_i)` per event.
    pub global_inputs: Mat,
}

impl SubSequenceBatch {
    pub fn len(&self) -> usize {
        self.local_inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.local_inputs.rows == 0
    }

    /// Length of every sub-sequence: `1, 2, …, N+1`.
    pub fn lengths(&self) -> Vec<usize> {
        (1..=self.len()).collect()
    }

    /// Tokens of sub-sequence `j` as `(local, global)` row lists.
    pub fn prefix(&self, j: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let take = |m: &Mat| (0..=j).map(|i| m.row_slice(i).to_vec()).collect();
        (take(&self.local_inputs), take(&self.global_inputs))
    }
}

/// Builds the prefix token matrices. Users missing from either embedding
/// table contribute zero vectors.
pub fn build_subsequences(
    seq: &CascadeSequence,
    local: &NodeEmbeddings,
    global: &NodeEmbeddings,
    b: usize,
) -> Result<SubSequenceBatch> {
    if local.dim() != b {
        return Err(Error::Config(format!("local embedding width {} must equal temporal width {b}", local.dim())));
    }
    let n = seq.len();
    let mut loc = Mat::zeros(n, b);
    let mut glob = Mat::zeros(n, global.dim());
    for (i, (u, &t)) in seq.users.iter().zip(&seq.times).enumerate() {
        let z = temporal_encode(t, b)?;
        let e = local.get(u);
        for k in 0..b {
            loc.set(i, k, z[k] + e.map_or(0.0, |e| e[k]));
        }
        if let Some(g) = global.get(u) {
            glob.data[i * global.dim()..(i + 1) * global.dim()].copy_from_slice(g);
        }
    }
    Ok(SubSequenceBatch { local_inputs: loc, global_inputs: glob })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Output of the newest token of each prefix.
    #[default]
    Last,
    /// Mean of all token outputs within each prefix.
    Mean,
}

/// Single-head scaled dot-product attention with bias-free projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub d_in: usize,
    pub d_attn: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_attn: usize) -> Self {
        let wq = store.add(format!("{name}.wq"), glorot(rng, d_in, d_attn));
        let wk = store.add(format!("{name}.wk"), glorot(rng, d_in, d_attn));
        let wv = store.add(format!("{name}.wv"), glorot(rng, d_in, d_attn));
        Self { wq, wk, wv, d_in, d_attn }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.wq, self.wk, self.wv]
    }

    fn qkv(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var, Var)> {
        let cols = tape.value(x).cols;
        if cols != self.d_in {
            return Err(Error::Config(format!("attention expects width {}, got {cols}", self.d_in)));
        }
        let (wq, wk, wv) = (tape.param(store, self.wq), tape.param(store, self.wk), tape.param(store, self.wv));
        Ok((tape.matmul(x, wq), tape.matmul(x, wk), tape.matmul(x, wv)))
    }

    /// One summary row per prefix (`N+1 x d_attn`) and, for last-token
    /// pooling, the causal attention weights.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        pooling: Pooling,
    ) -> Result<(Var, Option<Var>)> {
        let n = tape.value(x).rows;
        if n == 0 {
            return Err(Error::InvalidArgument("attention over an empty sequence".into()));
        }
        let (q, k, v) = self.qkv(tape, store, x)?;
        let scale = 1.0 / (self.d_attn as f64).sqrt();
        match pooling {
            Pooling::Last => {
                let scores = tape.matmul_t(q, k);
                let scores = tape.scale(scores, scale);
                let w = tape.causal_softmax(scores);
                Ok((tape.matmul(w, v), Some(w)))
            }
            Pooling::Mean => {
                let mut rows = Vec::with_capacity(n);
                for j in 0..n {
                    let (qj, kj, vj) = (tape.slice_rows(q, 0, j + 1), tape.slice_rows(k, 0, j + 1), tape.slice_rows(v, 0, j + 1));
                    let s = tape.matmul_t(qj, kj);
                    let s = tape.scale(s, scale);
                    let w = tape.softmax(s);
                    let out = tape.matmul(w, vj);
                    let avg = tape.constant(Mat::row(vec![1.0 / (j + 1) as f64; j + 1]));
                    rows.push(tape.matmul(avg, out));
                }
                Ok((vstack(tape, &rows), None))
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, pooling: Pooling) -> Result<Var> {
        Ok(self.forward_with_weights(tape, store, x, pooling)?.0)
    }

    /// Unmasked attention over all tokens (per-token outputs, no pooling).
    pub fn attend_full(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let (q, k, v) = self.qkv(tape, store, x)?;
        let s = tape.matmul_t(q, k);
        let s = tape.scale(s, 1.0 / (self.d_attn as f64).sqrt());
        let w = tape.softmax(s);
        Ok((tape.matmul(w, v), w))
    }
}

fn vstack(tape: &mut Tape, rows: &[Var]) -> Var {
    // Stack via transposed concatenation: [r0; r1; …] = Σ e_i ⊗ r_i.
    let n = rows.len();
    let mut acc: Option<Var> = None;
    for (i, &r) in rows.iter().enumerate() {
        let mut e = Mat::zeros(n, 1);
        e.set(i, 0, 1.0);
        let e = tape.constant(e);
        let placed = tape.matmul(e, r);
        acc = Some(match acc {
            Some(a) => tape.add(a, placed),
            None => placed,
        });
    }
    acc.expect("non-empty stack")
}

/// `s_j = concat(s_c^j, s_g^j)` row by row.
pub fn fuse_views(tape: &mut Tape, local: Var, global: Var) -> Result<Var> {
    let (a, b) = (tape.value(local).rows, tape.value(global).rows);
    if a != b {
        return Err(Error::InvalidArgument(format!("view lengths differ: {a} vs {b}")));
    }
    Ok(tape.hcat(&[local, global]))
}

/// Local and global attention streams plus fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualAttention {
    pub local: SelfAttention,
    pub global: SelfAttention,
    pub pooling: Pooling,
}

impl DualAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        d_local: usize,
        d_global: usize,
        d_attn: usize,
        pooling: Pooling,
    ) -> Self {
        Self {
            local: SelfAttention::new(store, rng, "attn.local", d_local, d_attn),
            global: SelfAttention::new(store, rng, "attn.global", d_global, d_attn),
            pooling,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.local.d_attn + self.global.d_attn
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.local.params().into_iter().chain(self.global.params()).collect()
    }

    /// Fused features `{s_0, …, s_N}` as an `(N+1) x out_dim` node.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &SubSequenceBatch) -> Result<Var> {
        let xl = tape.constant(batch.local_inputs.clone());
        let xg = tape.constant(batch.global_inputs.clone());
        let sc = self.local.forward(tape, store, xl, self.pooling)?;
        let sg = self.global.forward(tape, store, xg, self.pooling)?;
        fuse_views(tape, sc, sg)
    }
}
