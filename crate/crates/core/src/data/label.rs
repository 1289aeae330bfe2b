use serde::{Deserialize, Serialize};

use super::cascade::Cascade;
use crate::error::{Error, Result};

/// Prediction target for one cascade under `(t_o, t_p, l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub cascade_id: String,
    pub t_obs: f64,
    pub t_pred: f64,
    /// Events in `(t_o, t_p]`.
    pub popularity: u64,
    /// Per-interval counts over `l` uniform intervals, left-open right-closed.
    pub segments: Vec<u64>,
    /// Distinct users (root included) in the observed sequence.
    pub observed_participants: usize,
}

/// Interval bounds `t_o + iΔ` for `i = 1..=l`, the last one pinned to `t_p`.
pub fn segment_bounds(t_obs: f64, t_pred: f64, intervals: usize) -> Vec<f64> {
    let delta = (t_pred - t_obs) / intervals as f64;
    (1..=intervals)
        .map(|i| if i == intervals { t_pred } else { t_obs + i as f64 * delta })
        .collect()
}

pub fn label_sample(c: &Cascade, t_obs: f64, t_pred: f64, intervals: usize) -> Result<LabeledSample> {
    if !(t_obs > 0.0 && t_pred > t_obs) {
        return Err(Error::InvalidArgument(format!("need 0 < t_o < t_p, got t_o={t_obs}, t_p={t_pred}")));
    }
    if intervals == 0 {
        return Err(Error::InvalidArgument("interval count must be at least 1".into()));
    }
    let delta = (t_pred - t_obs) / intervals as f64;
    let mut segments = vec![0u64; intervals];
    for e in &c.events {
        if e.time > t_obs && e.time <= t_pred {
            // Bin i (1-based) owns ((i-1)Δ, iΔ] after the observation cut.
            let q = ((e.time - t_obs) / delta).ceil() as usize;
            segments[q.clamp(1, intervals) - 1] += 1;
        }
    }
    let observed = c.observed(t_obs);
    let mut users: Vec<&str> = observed.iter().map(|e| e.target.as_str()).collect();
    users.sort_unstable();
    users.dedup();
    Ok(LabeledSample {
        cascade_id: c.cascade_id.clone(),
        t_obs,
        t_pred,
        popularity: segments.iter().sum(),
        segments,
        observed_participants: users.len(),
    })
}
