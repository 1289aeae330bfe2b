use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::solver::{integrate, OdeSystem, SolverSpec};
use crate::error::{Error, Result};
use crate::nn::{glorot, Activation, Linear, Mlp, ParamId, ParamStore};
use crate::tape::{softplus, Tape, Var};
use crate::tensor::Mat;

/// Gated recurrent update `h = (1 - u)⊙h' + u⊙n` with
/// `u = σ(s·W_u + h'·U_u + b_u)`, `r = σ(s·W_r + h'·U_r + b_r)` and
/// `n = tanh(s·W_n + b_n + r⊙(h'·U_n + c_n))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gru {
    pub w_u: ParamId,
    pub u_u: ParamId,
    pub b_u: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
    pub c_n: ParamId,
}

impl Gru {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_h: usize) -> Self {
        let mut w = |s: &str, r: usize, c: usize, rng: &mut ChaCha8Rng| store.add(format!("{name}.{s}"), glorot(rng, r, c));
        let (w_u, u_u) = (w("w_u", d_in, d_h, rng), w("u_u", d_h, d_h, rng));
        let (w_r, u_r) = (w("w_r", d_in, d_h, rng), w("u_r", d_h, d_h, rng));
        let (w_n, u_n) = (w("w_n", d_in, d_h, rng), w("u_n", d_h, d_h, rng));
        let mut b = |s: &str| store.add(format!("{name}.{s}"), Mat::zeros(1, d_h));
        Self { w_u, u_u, b_u: b("b_u"), w_r, u_r, b_r: b("b_r"), w_n, u_n, b_n: b("b_n"), c_n: b("c_n") }
    }

    pub fn params(&self) -> [ParamId; 10] {
        [self.w_u, self.u_u, self.b_u, self.w_r, self.u_r, self.b_r, self.w_n, self.u_n, self.b_n, self.c_n]
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, s: Var) -> Var {
        let mut p = |id| tape.param(store, id);
        let [w_u, u_u, b_u, w_r, u_r, b_r, w_n, u_n, b_n, c_n] = self.params().map(&mut p);
        let gate = |tape: &mut Tape, w, u, b| {
            let a = tape.matmul(s, w);
            let c = tape.matmul(h, u);
            let sum = tape.add(a, c);
            let pre = tape.add_row(sum, b);
            tape.sigmoid(pre)
        };
        let upd = gate(tape, w_u, u_u, b_u);
        let reset = gate(tape, w_r, u_r, b_r);
        let hu = tape.matmul(h, u_n);
        let hu = tape.add_row(hu, c_n);
        let gated = tape.mul(reset, hu);
        let sw = tape.matmul(s, w_n);
        let sw = tape.add_row(sw, b_n);
        let pre = tape.add(sw, gated);
        let cand = tape.tanh(pre);
        // (1 - u)⊙h + u⊙n = h + u⊙(n - h)
        let diff = tape.sub(cand, h);
        let step = tape.mul(upd, diff);
        tape.add(h, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueMode {
    /// `Λ` at each bound, integrated from the cascade start.
    #[default]
    Absolute,
    /// `Λ(bound) - Λ(t_o)`.
    Increment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub solver: SolverSpec,
    /// Wall-clock time is divided by this before integration.
    pub time_scale: f64,
    pub cue_mode: CueMode,
    /// Replaces the learned growth rate by a constant (testing aid).
    #[serde(skip)]
    pub rate_override: Option<f64>,
}

impl EncodeOptions {
    pub fn new(solver: SolverSpec, time_scale: f64) -> Self {
        Self { solver, time_scale, cue_mode: CueMode::Absolute, rate_override: None }
    }
}

/// Values recorded at every integration checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub hidden: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    pub cumulative: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DynamicsOutput {
    /// `1 x d_h` state at the observation time.
    pub h_to: Var,
    /// `1 x l` cues at the segment bounds.
    pub cues: Var,
    pub trajectory: Trajectory,
}

/// Hidden-state ODE with event jumps and a softplus growth-rate readout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeDynamics {
    pub d_h: usize,
    pub d_s: usize,
    /// `dh/dt = f₂(h)`.
    pub f2: Mlp,
    /// `λ = softplus(h·w + b)`.
    pub rate: Linear,
    pub gru: Gru,
    pub h0: ParamId,
}

impl OdeDynamics {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d_s: usize, d_h: usize) -> Self {
        let f2 = Mlp::new(store, rng, "ode.f2", &[d_h, d_h, d_h, d_h], Activation::Tanh);
        let rate = Linear::new(store, rng, "ode.rate", d_h, 1);
        let gru = Gru::new(store, rng, "ode.gru", d_s, d_h);
        let h0 = store.add("ode.h0", Mat::zeros(1, d_h));
        Self { d_h, d_s, f2, rate, gru, h0 }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.f2.params();
        p.extend(self.rate.params());
        p.extend(self.gru.params());
        p.push(self.h0);
        p
    }

    pub fn growth_rate(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        let pre = self.rate.forward(tape, store, h);
        tape.softplus(pre)
    }

    /// Growth rate of a plain state vector.
    pub fn growth_rate_value(&self, store: &ParamStore, h: &[f64]) -> f64 {
        let w = store.get(self.rate.weight);
        let b = store.get(self.rate.bias).data[0];
        softplus(h.iter().zip(&w.data).map(|(x, w)| x * w).sum::<f64>() + b)
    }

    pub fn jump(&self, tape: &mut Tape, store: &ParamStore, h: Var, s: Var) -> Var {
        self.gru.forward(tape, store, h, s)
    }

    /// Integrates `dh/dt = f₂(h)` over `[t_from, t_to]` (already scaled).
    pub fn evolve(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        t_from: f64,
        t_to: f64,
        spec: &SolverSpec,
    ) -> Result<Var> {
        let mut flow = Flow { tape, store, model: self, augmented: false, rate_override: None };
        integrate(&mut flow, &h, t_from, t_to, spec)
    }

    /// Runs the jump/flow recursion over the observed events and extrapolates
    /// the cumulative intensity to each segment bound.
    ///
    /// `features` has one row per event; `times` are wall-clock event times
    /// relative to the cascade start, all `≤ t_o`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: Var,
        times: &[f64],
        t_o: f64,
        bounds: &[f64],
        opts: &EncodeOptions,
    ) -> Result<DynamicsOutput> {
        let n = tape.value(features).rows;
        if n != times.len() {
            return Err(Error::InvalidArgument(format!("{n} feature rows for {} event times", times.len())));
        }
        if times.first().is_some_and(|&t| t < 0.0)
            || times.windows(2).any(|w| w[1] < w[0])
            || times.last().is_some_and(|&t| t > t_o)
        {
            return Err(Error::InvalidArgument("event times must be sorted within [0, t_o]".into()));
        }
        if bounds.is_empty() || bounds[0] < t_o || bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("segment bounds must increase from t_o".into()));
        }
        if !(opts.time_scale > 0.0) {
            return Err(Error::Config("time scale must be positive".into()));
        }
        let scale = 1.0 / opts.time_scale;
        let d_h = self.d_h;
        let mut traj = Trajectory::default();
        let record = |tape: &Tape, y: Var, t: f64, traj: &mut Trajectory| {
            let v = &tape.value(y).data;
            traj.times.push(t);
            traj.hidden.push(v[..d_h].to_vec());
            traj.rates.push(opts.rate_override.unwrap_or_else(|| self.growth_rate_value(store, &v[..d_h])));
            traj.cumulative.push(v[d_h]);
        };

        let h0 = tape.param(store, self.h0);
        let zero = tape.constant(Mat::zeros(1, 1));
        let mut y = tape.hcat(&[h0, zero]);
        let mut t_prev = 0.0;
        record(tape, y, t_prev, &mut traj);
        for (i, &t) in times.iter().enumerate() {
            y = self.flow(tape, store, y, t_prev * scale, t * scale, opts)?;
            let h = tape.slice_cols(y, 0, d_h);
            let lam = tape.slice_cols(y, d_h, d_h + 1);
            let s = tape.row_of(features, i);
            let h = self.jump(tape, store, h, s);
            y = tape.hcat(&[h, lam]);
            t_prev = t;
            record(tape, y, t, &mut traj);
        }
        y = self.flow(tape, store, y, t_prev * scale, t_o * scale, opts)?;
        record(tape, y, t_o, &mut traj);
        let h_to = tape.slice_cols(y, 0, d_h);
        let lam_to = tape.slice_cols(y, d_h, d_h + 1);
        let mut cues = Vec::with_capacity(bounds.len());
        let mut t_prev = t_o;
        for &b in bounds {
            y = self.flow(tape, store, y, t_prev * scale, b * scale, opts)?;
            record(tape, y, b, &mut traj);
            let lam = tape.slice_cols(y, d_h, d_h + 1);
            cues.push(match opts.cue_mode {
                CueMode::Absolute => lam,
                CueMode::Increment => tape.sub(lam, lam_to),
            });
            t_prev = b;
        }
        let cues = tape.hcat(&cues);
        Ok(DynamicsOutput { h_to, cues, trajectory: traj })
    }

    fn flow(&self, tape: &mut Tape, store: &ParamStore, y: Var, a: f64, b: f64, opts: &EncodeOptions) -> Result<Var> {
        let mut flow = Flow { tape, store, model: self, augmented: true, rate_override: opts.rate_override };
        integrate(&mut flow, &y, a, b, &opts.solver)
    }
}

/// The hidden-state vector field on the tape, optionally augmented with the
/// cumulative growth rate as a trailing column.
struct Flow<'a> {
    tape: &'a mut Tape,
    store: &'a ParamStore,
    model: &'a OdeDynamics,
    augmented: bool,
    rate_override: Option<f64>,
}

impl OdeSystem for Flow<'_> {
    type State = Var;

    fn rhs(&mut self, _t: f64, y: &Var) -> Var {
        let d_h = self.model.d_h;
        let h = if self.augmented { self.tape.slice_cols(*y, 0, d_h) } else { *y };
        let dh = self.model.f2.forward(self.tape, self.store, h);
        if !self.augmented {
            return dh;
        }
        let lam = match self.rate_override {
            Some(c) => self.tape.constant(Mat::scalar(c)),
            None => self.model.growth_rate(self.tape, self.store, h),
        };
        self.tape.hcat(&[dh, lam])
    }

    fn lincomb(&mut self, base: &Var, terms: &[(f64, &Var)]) -> Var {
        let mut all = Vec::with_capacity(terms.len() + 1);
        all.push((1.0, *base));
        all.extend(terms.iter().map(|&(c, v)| (c, *v)));
        self.tape.lincomb(&all)
    }

    fn values(&self, y: &Var) -> Vec<f64> {
        self.tape.value(*y).data.clone()
    }
}
