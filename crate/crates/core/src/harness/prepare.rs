//! Turns raw cascades into model-ready samples: labels, split, global and
//! local embeddings, prefix token matrices and baseline features.

use std::fs::File;
use std::io::BufReader;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::attention::{build_subsequences, SubSequenceBatch};
use crate::data::{
    build_cascade_graph, build_cascade_sequence, build_global_graph, filter_and_split, label_sample, parse_cascades,
    segment_bounds, simulate_hawkes_cascades, Cascade, DatasetSplit, LabeledSample, SplitManifest, SplitName,
};
use crate::diffusion::Normalizer;
use crate::embed::{global_embed, graphwave_embed, EmbeddingCache, NodeEmbeddings};
use crate::error::{Error, Result};

/// Number of hand-built baseline features.
pub const NUM_BASELINE_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub cascade_id: String,
    pub popularity: f64,
    pub segments: Vec<u64>,
    /// Normalised segment targets.
    pub target: Vec<f64>,
    pub tokens: SubSequenceBatch,
    pub times: Vec<f64>,
    pub baseline: [f64; NUM_BASELINE_FEATURES],
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub normalizer: Normalizer,
    pub global: NodeEmbeddings,
    pub manifest: SplitManifest,
    pub t_obs: f64,
    pub t_pred: f64,
    pub bounds: Vec<f64>,
}

impl PreparedData {
    pub fn part(&self, name: SplitName) -> &[PreparedSample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Reads the configured cascade file or simulates cascades.
pub fn load_cascades(cfg: &ExperimentConfig) -> Result<Vec<Cascade>> {
    match cfg.data.resolved_path() {
        Some(path) => {
            let file = File::open(&path)
                .map_err(|e| Error::Config(format!("cannot open cascade file {}: {e}", path.display())))?;
            let parsed = parse_cascades(BufReader::new(file), cfg.data.format)?;
            if parsed.reordered > 0 {
                log::warn!("{} cascades had out-of-order events and were sorted", parsed.reordered);
            }
            Ok(parsed.cascades)
        }
        None => simulate_hawkes_cascades(&cfg.simulate),
    }
}

/// Labels every cascade and applies the participant filter and split.
pub fn label_and_split(cfg: &ExperimentConfig, cascades: &[Cascade]) -> Result<DatasetSplit> {
    let (t_o, t_p) = cfg.data.window()?;
    let samples: Vec<LabeledSample> =
        cascades.iter().map(|c| label_sample(c, t_o, t_p, cfg.data.intervals)).collect::<Result<_>>()?;
    filter_and_split(samples, cfg.data.min_observed, cfg.data.split, cfg.data.split_seed)
}

/// Baseline features: observed size, mean and max inter-event gap, tree
/// depth, root out-degree and time of the last observed event. Counts are
/// log-scaled and times expressed in units of `t_o`.
pub fn baseline_features(c: &Cascade, t_obs: f64) -> Result<[f64; NUM_BASELINE_FEATURES]> {
    let g = build_cascade_graph(c, t_obs)?;
    let seq = build_cascade_sequence(c, t_obs)?;
    let gaps: Vec<f64> = seq.times.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_gap = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let root_deg = g.index_of(&c.root_user).map_or(0, |r| g.out_degree(r));
    let lg = |x: f64| (x + 1.0).log2();
    Ok([
        lg(seq.len() as f64),
        mean_gap / t_obs,
        max_gap / t_obs,
        lg(g.depth() as f64),
        lg(root_deg as f64),
        seq.times.last().copied().unwrap_or(0.0) / t_obs,
    ])
}

/// Global embeddings over the observed parts of the kept cascades, through
/// the cache when one is configured.
pub fn compute_global(cfg: &ExperimentConfig, cascades: &[&Cascade]) -> Result<NodeEmbeddings> {
    let (t_o, _) = cfg.data.window()?;
    let owned: Vec<Cascade> = cascades.iter().map(|c| c.truncated(t_o)).collect();
    let graph = build_global_graph(&owned, t_o)?;
    let gcfg = cfg.global_embed();
    match &cfg.embed.cache_dir {
        Some(dir) => {
            let (e, hit) = EmbeddingCache::new(dir)?.get_or_compute(&graph, &gcfg)?;
            log::info!("global embeddings for {} users ({})", e.len(), if hit { "cached" } else { "computed" });
            Ok(e)
        }
        None => global_embed(&graph, &gcfg),
    }
}

/// Full preparation. `global` reuses embeddings (e.g. from a checkpoint).
pub fn prepare(cfg: &ExperimentConfig, global: Option<NodeEmbeddings>) -> Result<PreparedData> {
    let cascades = load_cascades(cfg)?;
    prepare_from(cfg, &cascades, global)
}

pub fn prepare_from(cfg: &ExperimentConfig, cascades: &[Cascade], global: Option<NodeEmbeddings>) -> Result<PreparedData> {
    cfg.validate()?;
    let (t_o, t_p) = cfg.data.window()?;
    let split = label_and_split(cfg, cascades)?;
    let by_id: std::collections::HashMap<&str, &Cascade> =
        cascades.iter().map(|c| (c.cascade_id.as_str(), c)).collect();
    let lookup = |s: &LabeledSample| -> Result<&Cascade> {
        by_id.get(s.cascade_id.as_str()).copied().ok_or_else(|| Error::InvalidArgument(format!("missing cascade {}", s.cascade_id)))
    };
    let kept: Vec<&Cascade> =
        split.train.iter().chain(&split.val).chain(&split.test).map(lookup).collect::<Result<_>>()?;
    let mut global = match global {
        Some(g) => g,
        None => compute_global(cfg, &kept)?,
    };
    global.rebuild_index();
    if global.dim() != cfg.model.d_g {
        return Err(Error::CheckpointMismatch(format!("global embeddings have width {}, expected {}", global.dim(), cfg.model.d_g)));
    }
    let normalizer = Normalizer::fit(&split.train.iter().map(|s| s.segments.clone()).collect::<Vec<_>>())?;
    let gw = cfg.graphwave();
    let build = |samples: &[LabeledSample]| -> Result<Vec<PreparedSample>> {
        samples
            .iter()
            .map(|s| {
                let c = lookup(s)?;
                let graph = build_cascade_graph(c, t_o)?;
                let seq = build_cascade_sequence(c, t_o)?;
                let local = graphwave_embed(&graph, &gw)?;
                let tokens = build_subsequences(&seq, &local, &global, cfg.model.d_c)?;
                let y: Vec<f64> = s.segments.iter().map(|&v| v as f64).collect();
                Ok(PreparedSample {
                    cascade_id: s.cascade_id.clone(),
                    popularity: s.popularity as f64,
                    segments: s.segments.clone(),
                    target: normalizer.normalize(&y),
                    tokens,
                    times: seq.times,
                    baseline: baseline_features(c, t_o)?,
                })
            })
            .collect()
    };
    Ok(PreparedData {
        train: build(&split.train)?,
        val: build(&split.val)?,
        test: build(&split.test)?,
        manifest: split.manifest(),
        normalizer,
        global,
        t_obs: t_o,
        t_pred: t_p,
        bounds: segment_bounds(t_o, t_p, cfg.data.intervals),
    })
}

/// Summary written next to preprocessed data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub total: usize,
    pub kept: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}
