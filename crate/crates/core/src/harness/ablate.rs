//! Variant comparison under shared data and seeds.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use super::evaluate::{csv_err, evaluate_split};
use super::model::Runtime;
use super::prepare::PreparedData;
use super::train::{init_model, train};
use crate::data::SplitName;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: Variant,
    pub msle: f64,
    pub mape: f64,
    pub count: usize,
    /// DDIM sampling calls made during training and evaluation.
    pub ddim_calls: usize,
    pub best_epoch: usize,
    pub seconds: f64,
}

/// Trains and tests one variant on already prepared data.
pub fn run_variant(cfg: &ExperimentConfig, variant: Variant, data: &PreparedData) -> Result<AblationRow> {
    let mut cfg = cfg.clone();
    cfg.model.variant = variant;
    cfg.validate()?;
    let start = Instant::now();
    let rt = Runtime::new(&cfg)?;
    let (model, mut store) = init_model(&cfg);
    let outcome = train(&cfg, &model, &mut store, data, &rt)?;
    let (report, _) = evaluate_split(&model, &store, data, SplitName::Test, &rt, &cfg.hash())?;
    let row = AblationRow {
        seed: cfg.train.seed,
        variant,
        msle: report.msle,
        mape: report.mape,
        count: report.count,
        ddim_calls: rt.ddim_calls.get(),
        best_epoch: outcome.best_epoch,
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!("seed {} {}: test msle {:.4} ({:.1}s)", row.seed, variant, row.msle, row.seconds);
    Ok(row)
}

/// One row per (seed, variant). Data and split are shared; only the
/// training seed changes between repetitions.
pub fn ablate(cfg: &ExperimentConfig, variants: &[Variant], seeds: &[u64], data: &PreparedData) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.train.seed = seed;
        for &v in variants {
            rows.push(run_variant(&c, v, data)?);
        }
    }
    Ok(rows)
}

/// Seeds where `a` reached a strictly lower test MSLE than `b`, out of the
/// seeds where both ran.
pub fn wins(rows: &[AblationRow], a: Variant, b: Variant) -> (usize, usize) {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    let find = |s: u64, v: Variant| rows.iter().find(|r| r.seed == s && r.variant == v).map(|r| r.msle);
    let pairs: Vec<(f64, f64)> = seeds.iter().filter_map(|&s| Some((find(s, a)?, find(s, b)?))).collect();
    (pairs.iter().filter(|(x, y)| x < y).count(), pairs.len())
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
