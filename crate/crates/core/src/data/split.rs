use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::label::LabeledSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split ratios must be in [0,1] and sum to 1, got {all:?}")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` items.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub seed: u64,
    pub min_observed: usize,
    pub ratios: SplitRatios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "valid" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

impl DatasetSplit {
    pub fn part(&self, name: SplitName) -> &[LabeledSample] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[LabeledSample]| v.iter().map(|s| s.cascade_id.clone()).collect();
        SplitManifest {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
            seed: self.seed,
            min_observed: self.min_observed,
            ratios: self.ratios,
            t_obs: self.train.first().map(|s| s.t_obs),
            t_pred: self.train.first().map(|s| s.t_pred),
        }
    }
}

/// On-disk record of split membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub min_observed: usize,
    pub ratios: SplitRatios,
    pub t_obs: Option<f64>,
    pub t_pred: Option<f64>,
}

/// Keeps samples with at least `min_observed` distinct observed participants
/// and shuffles them deterministically into train/val/test.
pub fn filter_and_split(
    samples: Vec<LabeledSample>,
    min_observed: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut kept: Vec<LabeledSample> =
        samples.into_iter().filter(|s| s.observed_participants >= min_observed).collect();
    if kept.len() < 3 {
        return Err(Error::TooFewSamples { count: kept.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kept.shuffle(&mut rng);
    let (n_train, n_val, _) = ratios.sizes(kept.len());
    let test = kept.split_off(n_train + n_val);
    let val = kept.split_off(n_train);
    Ok(DatasetSplit { train: kept, val, test, seed, min_observed, ratios })
}
