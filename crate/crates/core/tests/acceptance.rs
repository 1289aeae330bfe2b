//! Acceptance suite. All criteria run sequentially inside one test so that
//! the wall-clock limits are measured without competing test threads.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use casft::attention::{build_subsequences, temporal_encode, DualAttention, Pooling};
use casft::data::{
    build_cascade_sequence, simulate_hawkes_cascades, write_cascades, Cascade, RetweetEvent, SimulationConfig, SplitName,
};
use casft::diffusion::{ddim_sample, forward_diffuse, sample_noise, NoisePredictor, NoiseSchedule, ScheduleKind};
use casft::dynamics::{integrate, EncodeOptions, FnSystem, OdeDynamics, SolverMethod, SolverSpec};
use casft::embed::{graphwave_embed, NodeEmbeddings};
use casft::harness::ablate::{ablate, wins, write_ablation_csv};
use casft::harness::prepare::label_and_split;
use casft::harness::{evaluate_split, init_model, prepare, prepare_from, train, Checkpoint, ExperimentConfig, Runtime, Variant};
use casft::nn::{ParamId, ParamStore};
use casft::predictor::{mape, msle};
use casft::tape::Tape;
use casft::tensor::Mat;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Relative error; the denominator is floored at 1e-7 so gradients that
/// vanish are compared against central-difference truncation noise.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn c1_metric_oracles() -> Outcome {
    let m = msle(&[3.0], &[1.0]).map_err(|e| e.to_string())?;
    let a = mape(&[6.0], &[2.0]).map_err(|e| e.to_string())?;
    ensure((m - 1.0).abs() <= 1e-12, || format!("msle = {m}"))?;
    ensure((a - 1.0 / 3.0).abs() <= 1e-12, || format!("mape = {a}"))?;
    let p = [0.0, 1.0, 7.0, 42.0, 1234.0];
    ensure(msle(&p, &p).unwrap() == 0.0 && mape(&p, &p).unwrap() == 0.0, || "perfect predictions not zero".into())?;
    Ok(format!("msle {m}, mape {a}"))
}

fn c2_temporal_encoding() -> Outcome {
    for b in [2, 4, 8, 64, 128] {
        let z = temporal_encode(0.0, b).map_err(|e| e.to_string())?;
        let want: Vec<f64> = (0..b).map(|k| if k % 2 == 0 { 1.0 } else { 0.0 }).collect();
        ensure(z == want, || format!("t = 0, B = {b}: {z:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let t = rng.random_range(0.0..1e7);
        let b = 2 * rng.random_range(1..=64);
        let z = temporal_encode(t, b).unwrap();
        ensure(z.iter().all(|x| (-1.0..=1.0).contains(x)), || format!("out of range at t = {t}"))?;
    }
    Ok("1000 random encodings within [-1, 1]".into())
}

fn c3_solver_accuracy() -> Outcome {
    let decay = || FnSystem::new(|_t, y: &[f64]| y.iter().map(|v| -v).collect());
    let spec = SolverSpec::adaptive(SolverMethod::Dopri5, 1e-7, 1e-9);
    let y = integrate(&mut decay(), &vec![1.0], 0.0, 1.0, &spec).map_err(|e| e.to_string())?[0];
    let e1 = (-1f64).exp();
    ensure((y - e1).abs() < 1e-5, || format!("dopri5 {y} vs {e1}"))?;
    let y_default = integrate(&mut decay(), &vec![1.0], 0.0, 1.0, &SolverSpec::default()).unwrap()[0];
    ensure((y_default - e1).abs() < 1e-5, || format!("dopri5 (default tolerances) {y_default}"))?;
    let eu = integrate(&mut decay(), &vec![1.0], 0.0, 1.0, &SolverSpec::fixed(SolverMethod::Euler, 0.1)).unwrap()[0];
    ensure((eu - 0.9f64.powi(10)).abs() < 1e-9, || format!("euler {eu}"))?;
    // Flow composition on a nonlinear field for every method.
    let field = || FnSystem::new(|t: f64, y: &[f64]| vec![y[1], -y[0] * (1.0 + 0.3 * t.sin()) - 0.1 * y[1]]);
    for m in SolverMethod::ALL {
        let spec = if m.is_adaptive() { SolverSpec::adaptive(m, 1e-6, 1e-6) } else { SolverSpec::fixed(m, 0.01) };
        let tol = 1e-6;
        let y0 = vec![1.0, 0.0];
        let direct = integrate(&mut field(), &y0, 0.0, 2.0, &spec).unwrap();
        let mid = integrate(&mut field(), &y0, 0.0, 0.8, &spec).unwrap();
        let split = integrate(&mut field(), &mid, 0.8, 2.0, &spec).unwrap();
        let err = direct.iter().zip(&split).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(err <= 10.0 * tol, || format!("{}: composition error {err}", m.name()))?;
    }
    Ok(format!("dopri5 error {:.1e}, euler error {:.1e}", (y - e1).abs(), (eu - 0.9f64.powi(10)).abs()))
}

fn randomize(store: &mut ParamStore, ids: &[ParamId], rng: &mut ChaCha8Rng, scale: f64) {
    for &id in ids {
        for x in &mut store.get_mut(id).data {
            *x = rng.random_range(-scale..scale);
        }
    }
}

fn c4_dynamics_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for trial in 0..100 {
        let d_h = rng.random_range(2..=8);
        let d_s = rng.random_range(2..=6);
        let mut store = ParamStore::new();
        let m = OdeDynamics::new(&mut store, &mut rng, d_s, d_h);
        let ids: Vec<ParamId> = store.ids().collect();
        let scale = rng.random_range(0.1..2.0);
        randomize(&mut store, &ids, &mut rng, scale);
        let t_o = rng.random_range(0.5..5.0);
        let n = rng.random_range(1..12);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..t_o)).collect();
        times[0] = 0.0;
        times.sort_by(f64::total_cmp);
        let l = rng.random_range(1..6);
        let mut bounds: Vec<f64> = (1..=l).map(|i| t_o + i as f64 * rng.random_range(0.2..2.0)).collect();
        bounds.sort_by(f64::total_cmp);
        bounds.dedup();
        let feats = Mat::from_vec(n, d_s, (0..n * d_s).map(|_| rng.random_range(-1.0..1.0)).collect());
        let method = SolverMethod::ALL[trial % SolverMethod::ALL.len()];
        let spec = if method.is_adaptive() { SolverSpec::adaptive(method, 1e-6, 1e-6) } else { SolverSpec::fixed(method, 0.05) };
        let opts = EncodeOptions::new(spec, t_o);
        let mut tape = Tape::new();
        let f = tape.constant(feats);
        let out = m.encode(&mut tape, &store, f, &times, t_o, &bounds, &opts).map_err(|e| e.to_string())?;
        let tr = &out.trajectory;
        ensure(tr.rates.iter().all(|&r| r > 0.0), || format!("trial {trial}: non-positive rate"))?;
        ensure(tr.cumulative.windows(2).all(|w| w[1] >= w[0] - 1e-6), || format!("trial {trial}: Λ decreased"))?;
        let cues = &tape.value(out.cues).data;
        ensure(cues.windows(2).all(|w| w[1] >= w[0] - 1e-6), || format!("trial {trial}: cues decreased"))?;
        checked += 1;
    }

    // Causality through the whole encoder: events after t_o never reach the cues.
    let sim = SimulationConfig { n_cascades: 20, horizon: 40.0, seed: 44, ..Default::default() };
    let (d_c, d_g, t_o) = (8, 8, 10.0);
    let mut store = ParamStore::new();
    let mut mrng = ChaCha8Rng::seed_from_u64(45);
    let att = DualAttention::new(&mut store, &mut mrng, d_c, d_g, 8, Pooling::Last);
    let dyn_ = OdeDynamics::new(&mut store, &mut mrng, att.out_dim(), 6);
    let gw = casft::embed::GraphWaveConfig { num_scales: 2, ..casft::embed::GraphWaveConfig::with_points(2, 100.0) };
    let global = NodeEmbeddings::new(vec![], Mat::zeros(0, d_g));
    let opts = EncodeOptions::new(SolverSpec::default(), t_o);
    let bounds = [15.0, 20.0, 30.0, 40.0];
    let cues_of = |c: &Cascade| -> Vec<u64> {
        let seq = build_cascade_sequence(c, t_o).unwrap();
        let g = casft::data::build_cascade_graph(c, t_o).unwrap();
        let local = graphwave_embed(&g, &gw).unwrap();
        let batch = build_subsequences(&seq, &local, &global, d_c).unwrap();
        let mut tape = Tape::new();
        let feats = att.forward(&mut tape, &store, &batch).unwrap();
        let out = dyn_.encode(&mut tape, &store, feats, &seq.times, t_o, &bounds, &opts).unwrap();
        let mut v = tape.value(out.cues).data.clone();
        v.extend(&tape.value(out.h_to).data);
        v.iter().map(|x| x.to_bits()).collect()
    };
    for c in simulate_hawkes_cascades(&sim).unwrap() {
        let base = cues_of(&c);
        let mut moved = c.clone();
        for e in moved.events.iter_mut().filter(|e| e.time > t_o) {
            e.time = e.time * 1.3 + 0.1;
        }
        moved.events.push(RetweetEvent::new(c.root_user.clone(), "intruder", t_o + 1e-9));
        moved.events.sort_by(|a, b| a.time.total_cmp(&b.time));
        ensure(base == cues_of(&moved), || format!("cascade {}: cues changed", c.cascade_id))?;
        ensure(base == cues_of(&c.truncated(t_o)), || format!("cascade {}: truncation changed cues", c.cascade_id))?;
    }
    Ok(format!("{checked} random parameterisations; causality bit-exact on 20 cascades"))
}

fn c5_forward_marginals() -> Outcome {
    let sched = NoiseSchedule::new(1000, ScheduleKind::Linear, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let y0 = [1.5, -0.7, 0.0, 3.0];
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for k in [1, 100, 500, 1000] {
        let ab = sched.alpha_bar(k);
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let eps = sample_noise(&mut rng, 4);
            let y = forward_diffuse(&y0, k, &eps, &sched);
            for j in 0..4 {
                sum[j] += y[j];
                sq[j] += y[j] * y[j];
            }
        }
        let nf = n as f64;
        for j in 0..4 {
            let mean = sum[j] / nf;
            let var = (sq[j] - nf * mean * mean) / (nf - 1.0);
            let se_mean = ((1.0 - ab) / nf).sqrt();
            let se_var = (1.0 - ab) * (2.0 / (nf - 1.0)).sqrt();
            let zm = (mean - ab.sqrt() * y0[j]).abs() / se_mean;
            let zv = (var - (1.0 - ab)).abs() / se_var;
            worst = worst.max(zm).max(zv);
            ensure(zm <= 3.0, || format!("k = {k}, coord {j}: mean off by {zm:.2} SE"))?;
            ensure(zv <= 3.0, || format!("k = {k}, coord {j}: variance off by {zv:.2} SE"))?;
        }
    }
    for k in [500, 1000, 1500] {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            let s = NoiseSchedule::new(k, kind, 1e-4, 0.02).unwrap();
            ensure((1..=k).all(|i| s.alpha_bar(i) < s.alpha_bar(i - 1)), || format!("ᾱ not decreasing, K = {k}"))?;
        }
    }
    Ok(format!("largest deviation {worst:.2} SE"))
}

struct Oracle<'a> {
    target: Vec<f64>,
    sched: &'a NoiseSchedule,
}

impl NoisePredictor for Oracle<'_> {
    fn predict_noise(&mut self, y: &[f64], k: usize, _c: &[f64]) -> Vec<f64> {
        let ab = self.sched.alpha_bar(k);
        y.iter().zip(&self.target).map(|(yv, t)| (yv - ab.sqrt() * t) / (1.0 - ab).sqrt()).collect()
    }
}

fn c6_ddim() -> Outcome {
    let sched = NoiseSchedule::new(1000, ScheduleKind::Linear, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let target = vec![0.3, -1.2, 2.5, 0.0, 0.7, -0.4, 1.1, 0.9];
    let mut worst = 0.0f64;
    for (s, seed) in [(50, 1), (20, 2), (1000, 3)] {
        let out = ddim_sample(&mut Oracle { target: target.clone(), sched: &sched }, &[], 8, &sched, s, 0.0, seed)
            .map_err(|e| e.to_string())?;
        for x0 in out.trace.iter().chain(std::iter::once(&out.sample)) {
            let err = x0.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
        }
    }
    ensure(worst <= 1e-6, || format!("x̂₀ error {worst}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut store = ParamStore::new();
    let den = casft::diffusion::Denoiser::new(&mut store, &mut rng, 8, 5, 32, 2, 16);
    let c = [0.1, 0.2, -0.3, 0.4, 0.5];
    let a = ddim_sample(&mut den.predictor(&store), &c, 8, &sched, 50, 0.0, 9).unwrap();
    let b = ddim_sample(&mut den.predictor(&store), &c, 8, &sched, 50, 0.0, 9).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a.sample) == bits(&b.sample), || "sampling not bit-identical".into())?;
    Ok(format!("max x̂₀ error {worst:.1e}; repeat sampling bit-identical"))
}

fn c7_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d_c, d_g, d_attn) = (5, 4, 3, 4);
    let xl = Mat::from_vec(n, d_c, (0..n * d_c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let xg = Mat::from_vec(n, d_g, (0..n * d_g).map(|_| rng.random_range(-1.0..1.0)).collect());
    let batch = casft::attention::SubSequenceBatch { local_inputs: xl, global_inputs: xg };
    let mut worst_att = 0.0f64;
    let mut att_count = 0;
    for pooling in [Pooling::Last, Pooling::Mean] {
        let mut store = ParamStore::new();
        let att = DualAttention::new(&mut store, &mut rng, d_c, d_g, d_attn, pooling);
        let ids = att.params();
        randomize(&mut store, &ids, &mut rng, 0.8);
        let r = Mat::from_vec(n, 2 * d_attn, (0..n * 2 * d_attn).map(|_| rng.random_range(-1.0..1.0)).collect());
        let objective = |store: &ParamStore, tape: &mut Tape| {
            let out = att.forward(tape, store, &batch).unwrap();
            let rv = tape.constant(r.clone());
            let prod = tape.mul(out, rv);
            tape.sum(prod)
        };
        let mut tape = Tape::new();
        let loss = objective(&store, &mut tape);
        let grads = tape.backward(loss);
        let analytic: Vec<(ParamId, Mat)> = grads.param_grads().into_iter().map(|(id, g)| (id, g.clone())).collect();
        for (id, g) in &analytic {
            for k in 0..g.len() {
                let h = 1e-6;
                let orig = store.get(*id).data[k];
                store.get_mut(*id).data[k] = orig + h;
                let up = { let mut t = Tape::new(); let l = objective(&store, &mut t); t.scalar(l) };
                store.get_mut(*id).data[k] = orig - h;
                let down = { let mut t = Tape::new(); let l = objective(&store, &mut t); t.scalar(l) };
                store.get_mut(*id).data[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let e = rel_err(fd, g.data[k]);
                worst_att = worst_att.max(e);
                att_count += 1;
                ensure(e < 1e-4, || format!("attention {}[{k}] ({pooling:?}): fd {fd} vs {}", store.name(*id), g.data[k]))?;
            }
        }
    }

    // Λ cues against every parameter of a small dynamics block.
    let (d_s, d_h) = (3, 4);
    let mut store = ParamStore::new();
    let m = OdeDynamics::new(&mut store, &mut rng, d_s, d_h);
    let ids: Vec<ParamId> = store.ids().collect();
    randomize(&mut store, &ids, &mut rng, 0.5);
    let feats = Mat::from_vec(3, d_s, (0..3 * d_s).map(|_| rng.random_range(-1.0..1.0)).collect());
    let times = [0.0, 0.4, 0.9];
    let bounds = [1.5, 2.5];
    let opts = EncodeOptions::new(SolverSpec::fixed(SolverMethod::Rk4, 0.05), 1.0);
    let cue_sum = |store: &ParamStore, tape: &mut Tape| {
        let f = tape.constant(feats.clone());
        let out = m.encode(tape, store, f, &times, 1.0, &bounds, &opts).unwrap();
        let w = tape.constant(Mat::from_vec(1, 2, vec![0.7, 1.3]));
        let p = tape.mul(out.cues, w);
        tape.sum(p)
    };
    let mut tape = Tape::new();
    let loss = cue_sum(&store, &mut tape);
    let grads = tape.backward(loss);
    let analytic: Vec<(ParamId, Mat)> = grads.param_grads().into_iter().map(|(id, g)| (id, g.clone())).collect();
    let mut worst_cue = 0.0f64;
    let mut count = 0;
    for (id, g) in &analytic {
        for k in 0..g.len() {
            let h = 1e-6;
            let orig = store.get(*id).data[k];
            store.get_mut(*id).data[k] = orig + h;
            let up = { let mut t = Tape::new(); let l = cue_sum(&store, &mut t); t.scalar(l) };
            store.get_mut(*id).data[k] = orig - h;
            let down = { let mut t = Tape::new(); let l = cue_sum(&store, &mut t); t.scalar(l) };
            store.get_mut(*id).data[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let e = rel_err(fd, g.data[k]);
            worst_cue = worst_cue.max(e);
            count += 1;
            ensure(e < 1e-3, || format!("cue {}[{k}]: fd {fd} vs {}", store.name(*id), g.data[k]))?;
        }
    }
    Ok(format!("attention worst rel {worst_att:.1e} over {att_count} weights; cue worst rel {worst_cue:.1e} over {count} weights"))
}

fn overfit_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.simulate.n_cascades = 64;
    cfg.simulate.seed = 8;
    cfg.data.intervals = 8;
    cfg.data.min_observed = 1;
    cfg.model.d_h = 16;
    cfg.diff.k = 200;
    cfg.diff.ddim_steps = 20;
    cfg.train.epochs = 200;
    cfg.train.patience = 0;
    cfg.train.restore_best = false;
    cfg.validate().unwrap();
    cfg
}

fn c8_overfit() -> Outcome {
    let cfg = overfit_config();
    let cascades = simulate_hawkes_cascades(&cfg.simulate).map_err(|e| e.to_string())?;
    let mut data = prepare_from(&cfg, &cascades, None).map_err(|e| e.to_string())?;
    let mut rest = std::mem::take(&mut data.val);
    rest.append(&mut data.test);
    data.train.append(&mut rest);
    ensure(data.train.len() == 64, || format!("{} training cascades", data.train.len()))?;
    let rt = Runtime::new(&cfg).map_err(|e| e.to_string())?;
    let (model, mut store) = init_model(&cfg);
    let out = train(&cfg, &model, &mut store, &data, &rt).map_err(|e| e.to_string())?;
    let (report, _) = evaluate_split(&model, &store, &data, SplitName::Train, &rt, &cfg.hash()).map_err(|e| e.to_string())?;
    let ratio = report.msle / out.initial_train_msle;
    ensure(ratio < 0.3, || format!("train msle {:.4} vs initial {:.4} (ratio {ratio:.3})", report.msle, out.initial_train_msle))?;
    Ok(format!("train msle {:.4} -> {:.4} (ratio {ratio:.3})", out.initial_train_msle, report.msle))
}

fn ablation_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.simulate = SimulationConfig {
        n_cascades: 2000,
        base_rate: 0.5,
        rate_spread: 0.6,
        branching: 0.7,
        branching_spread: 0.2,
        background_decay: 0.02,
        background_decay_spread: 0.8,
        seed: 9,
        ..Default::default()
    };
    cfg.model.d_c = 32;
    cfg.model.d_g = 32;
    cfg.model.d_attn = 32;
    cfg.model.d_h = 32;
    cfg.ode.method = SolverMethod::Rk4;
    cfg.ode.step = 0.1;
    cfg.diff.k = 200;
    cfg.diff.ddim_steps = 10;
    cfg.train.lr = 3e-3;
    cfg.train.epochs = 30;
    cfg.train.patience = 5;
    cfg.validate().unwrap();
    cfg
}

fn c9_directional_ablation() -> Outcome {
    let cfg = ablation_config();
    let data = prepare(&cfg, None).map_err(|e| e.to_string())?;
    let seeds = [1, 2, 3, 4, 5];
    let rows = ablate(&cfg, &Variant::ALL, &seeds, &data).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    write_ablation_csv(&mut csv, &rows).map_err(|e| e.to_string())?;
    report(String::from_utf8_lossy(&csv).trim_end());
    for &s in &seeds {
        let variants: Vec<Variant> = rows.iter().filter(|r| r.seed == s).map(|r| r.variant).collect();
        ensure(variants == Variant::ALL.to_vec(), || format!("seed {s}: rows {variants:?}"))?;
    }
    ensure(rows.iter().filter(|r| r.variant == Variant::NoFt).all(|r| r.ddim_calls == 0), || "no_ft sampled".into())?;
    let (w, n) = wins(&rows, Variant::Full, Variant::NoFt);
    ensure(w >= 3, || format!("full beat no_ft in {w}/{n} seeds"))?;
    Ok(format!("full beat no_ft in {w}/{n} seeds on {} test cascades", data.test.len()))
}

/// 100 cascades with 10 to 20 participants by `t_o` and 25 with 4 to 9.
fn fixture_corpus() -> Vec<Cascade> {
    let mut out = Vec::new();
    for i in 0..125usize {
        let participants = if i < 100 { 10 + i % 11 } else { 4 + i % 6 };
        let root = format!("root{i}");
        let mut events = Vec::new();
        for j in 1..participants {
            let parent = if j == 1 { root.clone() } else { format!("f{i}_{}", j / 2) };
            events.push(RetweetEvent::new(parent, format!("f{i}_{j}"), j as f64 * 0.9 + (i % 3) as f64 * 0.1));
        }
        for j in 0..(i % 13) {
            events.push(RetweetEvent::new(root.clone(), format!("late{i}_{j}"), 21.0 + j as f64 * 5.5));
        }
        out.push(Cascade::from_raw(format!("fx{i:03}"), root, events, Some(0.0)).unwrap().0);
    }
    out
}

fn c10_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("fixture.jsonl");
    let corpus = fixture_corpus();
    write_cascades(std::fs::File::create(&path).unwrap(), &corpus).map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::default();
    cfg.data.path = Some(path);
    cfg.data.t_obs = 20.0;
    cfg.data.t_pred = 100.0;
    cfg.data.intervals = 4;
    cfg.model.d_c = 8;
    cfg.model.d_g = 8;
    cfg.model.d_attn = 8;
    cfg.model.d_h = 8;
    cfg.diff.k = 100;
    cfg.diff.ddim_steps = 10;
    cfg.train.epochs = 2;
    cfg.validate().unwrap();
    let loaded = casft::harness::prepare::load_cascades(&cfg).map_err(|e| e.to_string())?;
    ensure(loaded == corpus, || "fixture did not round-trip through the file".into())?;
    let split = label_and_split(&cfg, &loaded).map_err(|e| e.to_string())?;
    let sizes = (split.train.len(), split.val.len(), split.test.len());
    ensure(sizes == (70, 15, 15), || format!("split sizes {sizes:?}"))?;
    let kept: Vec<_> = split.train.iter().chain(&split.val).chain(&split.test).collect();
    ensure(kept.iter().all(|s| s.observed_participants >= 10), || "kept a small cascade".into())?;
    let mut ids: Vec<&str> = kept.iter().map(|s| s.cascade_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    let want: Vec<String> = (0..100).map(|i| format!("fx{i:03}")).collect();
    ensure(ids == want.iter().map(String::as_str).collect::<Vec<_>>(), || "wrong cascades survived the filter".into())?;

    let data = prepare(&cfg, None).map_err(|e| e.to_string())?;
    let rt = Runtime::new(&cfg).map_err(|e| e.to_string())?;
    let (model, mut store) = init_model(&cfg);
    let out = train(&cfg, &model, &mut store, &data, &rt).map_err(|e| e.to_string())?;
    let (before, _) = evaluate_split(&model, &store, &data, SplitName::Test, &rt, &cfg.hash()).map_err(|e| e.to_string())?;
    let ck_path = dir.path().join("ck.json");
    Checkpoint::new(&cfg, &model, &store, &data.normalizer, &data.global, out.best_epoch, out.best_val_msle)
        .save(&ck_path)
        .map_err(|e| e.to_string())?;
    let ck = Checkpoint::load(&ck_path, Some(&cfg)).map_err(|e| e.to_string())?;
    let data2 = prepare(&ck.config, Some(ck.global.clone())).map_err(|e| e.to_string())?;
    let rt2 = Runtime::new(&ck.config).map_err(|e| e.to_string())?;
    let (after, _) = evaluate_split(&ck.model, &ck.params, &data2, SplitName::Test, &rt2, &ck.config_hash).map_err(|e| e.to_string())?;
    ensure(
        before.msle.to_bits() == after.msle.to_bits() && before.mape.to_bits() == after.mape.to_bits(),
        || format!("metrics changed: {before:?} vs {after:?}"),
    )?;
    Ok(format!("split 70/15/15 of 100 kept; test msle {} reproduced bit-exactly", after.msle))
}

/// Writes past the test harness's output capture so the verdicts show up in
/// a plain `cargo test` run.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("metric oracles", Duration::from_secs(1), c1_metric_oracles),
        ("temporal encoding", Duration::from_secs(1), c2_temporal_encoding),
        ("ODE solver accuracy", Duration::from_secs(5), c3_solver_accuracy),
        ("dynamics invariants", Duration::from_secs(60), c4_dynamics_invariants),
        ("diffusion forward marginals", Duration::from_secs(30), c5_forward_marginals),
        ("DDIM correctness", Duration::from_secs(10), c6_ddim),
        ("gradient checks", Duration::from_secs(60), c7_gradients),
        ("end-to-end overfit", Duration::from_secs(15 * 60), c8_overfit),
        ("directional ablation", Duration::from_secs(2 * 3600), c9_directional_ablation),
        ("protocol fidelity", Duration::from_secs(60), c10_protocol),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}")),
            other => other,
        };
        match &result {
            Ok(detail) => report(&format!("criterion {}: PASS  {name} ({elapsed:.2?}) {detail}", i + 1)),
            Err(why) => {
                report(&format!("criterion {}: FAIL  {name} ({elapsed:.2?}) {why}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
