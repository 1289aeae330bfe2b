//! JSON checkpoints holding everything needed to reproduce predictions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::model::CasftModel;
use super::train::init_model;
use crate::diffusion::Normalizer;
use crate::embed::NodeEmbeddings;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub model: CasftModel,
    pub params: ParamStore,
    pub normalizer: Normalizer,
    pub global: NodeEmbeddings,
    pub epoch: usize,
    pub val_msle: Option<f64>,
}

impl Checkpoint {
    pub fn new(
        config: &ExperimentConfig,
        model: &CasftModel,
        params: &ParamStore,
        normalizer: &Normalizer,
        global: &NodeEmbeddings,
        epoch: usize,
        val_msle: Option<f64>,
    ) -> Self {
        Self {
            version: FORMAT_VERSION,
            config: config.clone(),
            config_hash: config.hash(),
            model: model.clone(),
            params: params.clone(),
            normalizer: normalizer.clone(),
            global: global.clone(),
            epoch,
            val_msle,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads and checks internal consistency. With `expected`, the
    /// checkpoint must also have been trained under the same config hash.
    pub fn load(path: &Path, expected: Option<&ExperimentConfig>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.version != FORMAT_VERSION {
            return Err(Error::CheckpointMismatch(format!("format version {} (expected {FORMAT_VERSION})", ck.version)));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::CheckpointMismatch("stored config does not match its hash".into()));
        }
        if let Some(cfg) = expected {
            let h = cfg.hash();
            if h != ck.config_hash {
                return Err(Error::CheckpointMismatch(format!("config hash {h} vs checkpoint {}", ck.config_hash)));
            }
        }
        let (fresh, fresh_params) = init_model(&ck.config);
        if fresh != ck.model || fresh_params.len() != ck.params.len() {
            return Err(Error::CheckpointMismatch("model structure differs from its config".into()));
        }
        for id in fresh_params.ids() {
            let (a, b) = (fresh_params.get(id), ck.params.get(id));
            if a.shape() != b.shape() || fresh_params.name(id) != ck.params.name(id) {
                return Err(Error::CheckpointMismatch(format!("parameter {} has the wrong shape", fresh_params.name(id))));
            }
        }
        ck.global.rebuild_index();
        Ok(ck)
    }
}
