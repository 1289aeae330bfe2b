//! Explicit Runge–Kutta (fixed and embedded adaptive) and Adams
//! predictor–corrector integrators over a generic state type, so the same
//! code runs on plain vectors and on recorded tape variables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An autonomous or time-dependent vector field together with the few
/// algebraic operations the integrators need on its state.
pub trait OdeSystem {
    type State: Clone;

    fn rhs(&mut self, t: f64, y: &Self::State) -> Self::State;

    /// `base + Σ cᵢ·termᵢ`
    fn lincomb(&mut self, base: &Self::State, terms: &[(f64, &Self::State)]) -> Self::State;

    /// Numeric values, used for error control only.
    fn values(&self, y: &Self::State) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Euler,
    Midpoint,
    Rk4,
    Bosh3,
    AdaptiveHeun,
    Dopri5,
    ImplicitAdams,
}

impl SolverMethod {
    pub const ALL: [SolverMethod; 7] = [
        SolverMethod::Bosh3,
        SolverMethod::AdaptiveHeun,
        SolverMethod::Euler,
        SolverMethod::Rk4,
        SolverMethod::ImplicitAdams,
        SolverMethod::Midpoint,
        SolverMethod::Dopri5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::Midpoint => "midpoint",
            Self::Rk4 => "rk4",
            Self::Bosh3 => "bosh3",
            Self::AdaptiveHeun => "adaptive_heun",
            Self::Dopri5 => "dopri5",
            Self::ImplicitAdams => "implicit_adams",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::Bosh3 | Self::AdaptiveHeun | Self::Dopri5)
    }
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::UnknownSolver(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSpec {
    pub method: SolverMethod,
    pub rtol: f64,
    pub atol: f64,
    /// Step size for fixed-step methods.
    pub step: f64,
    /// Step budget per call for adaptive methods.
    pub max_steps: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { method: SolverMethod::Dopri5, rtol: 1e-5, atol: 1e-5, step: 0.1, max_steps: 10_000 }
    }
}

impl SolverSpec {
    pub fn fixed(method: SolverMethod, step: f64) -> Self {
        Self { method, step, ..Default::default() }
    }

    pub fn adaptive(method: SolverMethod, rtol: f64, atol: f64) -> Self {
        Self { method, rtol, atol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if !self.method.is_adaptive() && !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config("fixed-step solvers need a positive step".into()));
        }
        Ok(())
    }
}

struct Tableau {
    c: &'static [f64],
    a: &'static [&'static [f64]],
    b: &'static [f64],
    /// Weights of the embedded lower-order solution.
    b_low: Option<&'static [f64]>,
    /// Order used in the step-size exponent.
    order: i32,
    /// The last stage is evaluated at the new solution (first same as last).
    fsal: bool,
}

const EULER: Tableau = Tableau { c: &[0.0], a: &[&[]], b: &[1.0], b_low: None, order: 1, fsal: false };

const MIDPOINT: Tableau =
    Tableau { c: &[0.0, 0.5], a: &[&[], &[0.5]], b: &[0.0, 1.0], b_low: None, order: 2, fsal: false };

const RK4: Tableau = Tableau {
    c: &[0.0, 0.5, 0.5, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    b_low: None,
    order: 4,
    fsal: false,
};

const HEUN_EULER: Tableau = Tableau {
    c: &[0.0, 1.0],
    a: &[&[], &[1.0]],
    b: &[0.5, 0.5],
    b_low: Some(&[1.0, 0.0]),
    order: 2,
    fsal: false,
};

const BOSH3: Tableau = Tableau {
    c: &[0.0, 0.5, 0.75, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.75], &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]],
    b: &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
    b_low: Some(&[7.0 / 24.0, 0.25, 1.0 / 3.0, 0.125]),
    order: 3,
    fsal: true,
};

const DOPRI5: Tableau = Tableau {
    c: &[0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0],
    a: &[
        &[],
        &[0.2],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ],
    b: &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    b_low: Some(&[
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ]),
    order: 5,
    fsal: true,
};

fn tableau(method: SolverMethod) -> &'static Tableau {
    match method {
        SolverMethod::Euler => &EULER,
        SolverMethod::Midpoint => &MIDPOINT,
        SolverMethod::Rk4 | SolverMethod::ImplicitAdams => &RK4,
        SolverMethod::AdaptiveHeun => &HEUN_EULER,
        SolverMethod::Bosh3 => &BOSH3,
        SolverMethod::Dopri5 => &DOPRI5,
    }
}

/// One explicit RK step; returns the new state and all stage derivatives.
fn rk_step<S: OdeSystem>(
    sys: &mut S,
    tab: &Tableau,
    t: f64,
    y: &S::State,
    h: f64,
    k1: Option<S::State>,
) -> (S::State, Vec<S::State>) {
    let mut ks: Vec<S::State> = Vec::with_capacity(tab.c.len());
    ks.push(k1.unwrap_or_else(|| sys.rhs(t, y)));
    let mut last_point = None;
    for i in 1..tab.c.len() {
        let terms: Vec<(f64, &S::State)> =
            tab.a[i].iter().zip(&ks).filter(|(a, _)| **a != 0.0).map(|(a, k)| (h * a, k)).collect();
        let yi = sys.lincomb(y, &terms);
        ks.push(sys.rhs(t + tab.c[i] * h, &yi));
        last_point = Some(yi);
    }
    let y_new = match last_point {
        // The last stage point already equals the new solution.
        Some(p) if tab.fsal => p,
        _ => {
            let terms: Vec<(f64, &S::State)> =
                tab.b.iter().zip(&ks).filter(|(b, _)| **b != 0.0).map(|(b, k)| (h * b, k)).collect();
            sys.lincomb(y, &terms)
        }
    };
    (y_new, ks)
}

/// Integrates from `t0` to `t1 ≥ t0`.
pub fn integrate<S: OdeSystem>(sys: &mut S, y0: &S::State, t0: f64, t1: f64, spec: &SolverSpec) -> Result<S::State> {
    if !(t1 >= t0) {
        return Err(Error::InvalidArgument(format!("cannot integrate backwards from {t0} to {t1}")));
    }
    if t1 == t0 {
        return Ok(y0.clone());
    }
    spec.validate()?;
    match spec.method {
        SolverMethod::Euler | SolverMethod::Midpoint | SolverMethod::Rk4 => {
            Ok(fixed_steps(sys, tableau(spec.method), y0, t0, t1, spec.step))
        }
        SolverMethod::ImplicitAdams => Ok(adams(sys, y0, t0, t1, spec.step)),
        _ => adaptive(sys, tableau(spec.method), y0, t0, t1, spec),
    }
}

fn step_count(t0: f64, t1: f64, step: f64) -> usize {
    (((t1 - t0) / step) - 1e-9).ceil().max(1.0) as usize
}

fn fixed_steps<S: OdeSystem>(sys: &mut S, tab: &Tableau, y0: &S::State, t0: f64, t1: f64, step: f64) -> S::State {
    let n = step_count(t0, t1, step);
    let h = (t1 - t0) / n as f64;
    let mut y = y0.clone();
    for i in 0..n {
        y = rk_step(sys, tab, t0 + i as f64 * h, &y, h, None).0;
    }
    y
}

/// Fourth-order Adams–Bashforth predictor with Adams–Moulton corrector
/// iterations, bootstrapped by RK4.
fn adams<S: OdeSystem>(sys: &mut S, y0: &S::State, t0: f64, t1: f64, step: f64) -> S::State {
    const CORRECTOR_ITERS: usize = 4;
    let n = step_count(t0, t1, step);
    let h = (t1 - t0) / n as f64;
    let mut y = y0.clone();
    let mut hist: Vec<S::State> = vec![sys.rhs(t0, &y)];
    for i in 0..n {
        let t = t0 + i as f64 * h;
        if hist.len() < 4 {
            y = rk_step(sys, &RK4, t, &y, h, Some(hist.last().expect("history").clone())).0;
        } else {
            let m = hist.len();
            let (f0, f1, f2, f3) = (&hist[m - 1], &hist[m - 2], &hist[m - 3], &hist[m - 4]);
            let c = h / 24.0;
            let pred = sys.lincomb(&y, &[(55.0 * c, f0), (-59.0 * c, f1), (37.0 * c, f2), (-9.0 * c, f3)]);
            let mut next = pred;
            let mut prev_vals = sys.values(&next);
            for _ in 0..CORRECTOR_ITERS {
                let fn1 = sys.rhs(t + h, &next);
                next = sys.lincomb(&y, &[(9.0 * c, &fn1), (19.0 * c, f0), (-5.0 * c, f1), (c, f2)]);
                let vals = sys.values(&next);
                let delta = vals.iter().zip(&prev_vals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prev_vals = vals;
                if delta < 1e-12 {
                    break;
                }
            }
            y = next;
        }
        hist.push(sys.rhs(t + h, &y));
        if hist.len() > 4 {
            hist.remove(0);
        }
    }
    y
}

fn rms_norm(v: &[f64], scale: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().zip(scale).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn adaptive<S: OdeSystem>(
    sys: &mut S,
    tab: &Tableau,
    y0: &S::State,
    t0: f64,
    t1: f64,
    spec: &SolverSpec,
) -> Result<S::State> {
    const SAFETY: f64 = 0.9;
    const MIN_FACTOR: f64 = 0.2;
    const MAX_FACTOR: f64 = 10.0;
    let b_low = tab.b_low.expect("embedded pair");
    let scale_of = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| spec.atol + spec.rtol * x.abs().max(y.abs())).collect()
    };

    let mut t = t0;
    let mut y = y0.clone();
    let mut f = sys.rhs(t, &y);
    let mut h = initial_step(sys, &y, &f, t0, tab.order, spec).min(t1 - t0);
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > spec.max_steps || h <= 1e-12 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t_from: t0, t_to: t1, t });
        }
        let last = t + h >= t1 - 1e-12 * t1.abs().max(1.0);
        let h_eff = if last { t1 - t } else { h };
        let (y_new, ks) = rk_step(sys, tab, t, &y, h_eff, Some(f.clone()));
        let vals_k: Vec<Vec<f64>> = ks.iter().map(|k| sys.values(k)).collect();
        let dim = vals_k[0].len();
        let err: Vec<f64> = (0..dim)
            .map(|i| h_eff * (0..ks.len()).map(|s| (tab.b_full(s) - b_low[s]) * vals_k[s][i]).sum::<f64>())
            .collect();
        let (yv, ynv) = (sys.values(&y), sys.values(&y_new));
        let ratio = rms_norm(&err, &scale_of(&yv, &ynv));
        if !ratio.is_finite() {
            h *= MIN_FACTOR;
            continue;
        }
        let factor = if ratio == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * ratio.powf(-1.0 / tab.order as f64)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        if ratio <= 1.0 {
            t = if last { t1 } else { t + h_eff };
            f = if tab.fsal { ks.into_iter().last().expect("stages") } else { sys.rhs(t, &y_new) };
            y = y_new;
            h = h_eff * factor;
        } else {
            h = h_eff * factor.min(1.0);
        }
    }
    Ok(y)
}

impl Tableau {
    /// High-order weight of stage `s`, treating the FSAL stage as weight 0.
    fn b_full(&self, s: usize) -> f64 {
        self.b.get(s).copied().unwrap_or(0.0)
    }
}

/// Starting step from the local derivative scale.
fn initial_step<S: OdeSystem>(sys: &mut S, y0: &S::State, f0: &S::State, t0: f64, order: i32, spec: &SolverSpec) -> f64 {
    let (yv, fv) = (sys.values(y0), sys.values(f0));
    let scale: Vec<f64> = yv.iter().map(|x| spec.atol + spec.rtol * x.abs()).collect();
    let d0 = rms_norm(&yv, &scale);
    let d1 = rms_norm(&fv, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = sys.lincomb(y0, &[(h0, f0)]);
    let f1 = sys.rhs(t0 + h0, &y1);
    let f1 = sys.values(&f1);
    let diff: Vec<f64> = f1.iter().zip(&fv).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / (order + 1) as f64)
    };
    (100.0 * h0).min(h1)
}

/// A plain-vector system defined by a closure `f(t, y)`.
pub struct FnSystem<F: FnMut(f64, &[f64]) -> Vec<f64>> {
    pub f: F,
    pub evaluations: usize,
}

impl<F: FnMut(f64, &[f64]) -> Vec<f64>> FnSystem<F> {
    pub fn new(f: F) -> Self {
        Self { f, evaluations: 0 }
    }
}

impl<F: FnMut(f64, &[f64]) -> Vec<f64>> OdeSystem for FnSystem<F> {
    type State = Vec<f64>;

    fn rhs(&mut self, t: f64, y: &Vec<f64>) -> Vec<f64> {
        self.evaluations += 1;
        (self.f)(t, y)
    }

    fn lincomb(&mut self, base: &Vec<f64>, terms: &[(f64, &Vec<f64>)]) -> Vec<f64> {
        let mut out = base.clone();
        for (c, v) in terms {
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += c * x;
            }
        }
        out
    }

    fn values(&self, y: &Vec<f64>) -> Vec<f64> {
        y.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> FnSystem<impl FnMut(f64, &[f64]) -> Vec<f64>> {
        FnSystem::new(|_, y: &[f64]| y.iter().map(|v| -v).collect())
    }

    #[test]
    fn dopri5_matches_exponential() {
        let y = integrate(&mut decay(), &vec![1.0], 0.0, 1.0, &SolverSpec::default()).unwrap();
        assert!((y[0] - (-1f64).exp()).abs() < 1e-5, "{}", y[0]);
    }

    #[test]
    fn euler_is_the_geometric_product() {
        let y = integrate(&mut decay(), &vec![1.0], 0.0, 1.0, &SolverSpec::fixed(SolverMethod::Euler, 0.1)).unwrap();
        assert!((y[0] - 0.9f64.powi(10)).abs() < 1e-9);
    }

    #[test]
    fn zero_length_interval_is_identity() {
        for m in SolverMethod::ALL {
            let y = integrate(&mut decay(), &vec![0.3, 2.0], 1.5, 1.5, &SolverSpec { method: m, ..Default::default() })
                .unwrap();
            assert_eq!(y, vec![0.3, 2.0]);
        }
    }

    #[test]
    fn every_method_converges_on_exponential() {
        for m in SolverMethod::ALL {
            let spec = SolverSpec { method: m, step: 0.01, rtol: 1e-7, atol: 1e-9, ..Default::default() };
            let y = integrate(&mut decay(), &vec![1.0], 0.0, 2.0, &spec).unwrap();
            let tol = if m == SolverMethod::Euler { 1e-2 } else { 1e-5 };
            assert!((y[0] - (-2f64).exp()).abs() < tol, "{m}: {}", y[0]);
        }
    }

    #[test]
    fn convergence_orders() {
        // Error ratio when halving the step approaches 2^order.
        let exact = (-1f64).exp();
        for (m, order) in [(SolverMethod::Euler, 1), (SolverMethod::Midpoint, 2), (SolverMethod::Rk4, 4), (SolverMethod::ImplicitAdams, 4)] {
            let err = |h: f64| (integrate(&mut decay(), &vec![1.0], 0.0, 1.0, &SolverSpec::fixed(m, h)).unwrap()[0] - exact).abs();
            let ratio = err(0.02) / err(0.01);
            let want = 2f64.powi(order);
            assert!((ratio / want - 1.0).abs() < 0.2, "{m}: ratio {ratio}");
        }
    }

    #[test]
    fn nonautonomous_field() {
        // y' = cos t, y(0) = 0 → sin t.
        let mut sys = FnSystem::new(|t, _y: &[f64]| vec![t.cos()]);
        for m in SolverMethod::ALL {
            let spec = SolverSpec { method: m, step: 0.001, ..Default::default() };
            let y = integrate(&mut sys, &vec![0.0], 0.0, 2.0, &spec).unwrap();
            assert!((y[0] - 2f64.sin()).abs() < 2e-3, "{m}");
        }
    }

    #[test]
    fn flow_composes() {
        let spec = SolverSpec::default();
        let mut sys = FnSystem::new(|_, y: &[f64]| vec![y[1], -y[0] - 0.1 * y[1]]);
        let direct = integrate(&mut sys, &vec![1.0, 0.0], 0.0, 3.0, &spec).unwrap();
        let mid = integrate(&mut sys, &vec![1.0, 0.0], 0.0, 1.2, &spec).unwrap();
        let split = integrate(&mut sys, &mid, 1.2, 3.0, &spec).unwrap();
        for (a, b) in direct.iter().zip(&split) {
            assert!((a - b).abs() < 10.0 * spec.rtol.max(spec.atol));
        }
    }

    #[test]
    fn stiff_blowup_reports_interval() {
        let mut sys = FnSystem::new(|_, y: &[f64]| vec![y[0] * y[0]]);
        let spec = SolverSpec { max_steps: 200, ..Default::default() };
        // y' = y², y(0) = 1 blows up at t = 1.
        match integrate(&mut sys, &vec![1.0], 0.0, 2.0, &spec) {
            Err(Error::StepSizeUnderflow { t_from, t_to, t }) => {
                assert_eq!((t_from, t_to), (0.0, 2.0));
                assert!(t > 0.9 && t < 1.01, "{t}");
            }
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn unknown_solver_lists_options() {
        let e = "rk45".parse::<SolverMethod>().unwrap_err().to_string();
        for m in SolverMethod::ALL {
            assert!(e.contains(m.name()), "{e}");
        }
        assert_eq!("implicit_adams".parse::<SolverMethod>().unwrap(), SolverMethod::ImplicitAdams);
    }
}
