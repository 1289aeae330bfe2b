//! Experiment configuration: one TOML document with `data`, `simulate`,
//! `model`, `embed`, `ode`, `diff`, `train` and `run` tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::Pooling;
use crate::data::{CascadeFormat, SimulationConfig, SplitRatios};
use crate::diffusion::ScheduleKind;
use crate::dynamics::{CueMode, SolverMethod, SolverSpec};
use crate::embed::{GlobalEmbedConfig, GraphWaveConfig};
use crate::error::{Error, Result};

pub const DATA_DIR_ENV: &str = "CASFT_DATA_DIR";

const DAY: f64 = 86_400.0;
const YEAR: f64 = 365.0 * DAY;

/// Observation/prediction windows (seconds) of the public corpora.
pub const PRESETS: [(&str, f64, f64); 6] = [
    ("twitter_1d", DAY, 15.0 * DAY),
    ("twitter_2d", 2.0 * DAY, 15.0 * DAY),
    ("aps_3y", 3.0 * YEAR, 20.0 * YEAR),
    ("aps_5y", 5.0 * YEAR, 20.0 * YEAR),
    ("weibo_0.5h", 1_800.0, DAY),
    ("weibo_1h", 3_600.0, DAY),
];

pub fn preset(name: &str) -> Result<(f64, f64)> {
    PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(_, o, p)| (o, p))
        .ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            Error::Config(format!("unknown dataset preset `{name}`; known: {}", known.join(", ")))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Prediction from the observed state only.
    NoFt,
    /// Spatiotemporal features stand in for the ODE state and cues.
    NoOde,
    /// The head reads the condition vector directly.
    NoDiffusion,
    /// A feed-forward regressor replaces the diffusion trend generator.
    Fm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoFt, Variant::NoOde, Variant::NoDiffusion, Variant::Fm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoFt => "no_ft",
            Self::NoOde => "no_ode",
            Self::NoDiffusion => "no_diffusion",
            Self::Fm => "fm",
        }
    }

    pub fn uses_ode(self) -> bool {
        self != Self::NoOde
    }

    pub fn uses_diffusion(self) -> bool {
        matches!(self, Self::Full | Self::NoOde)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (full, no_ft, no_ode, no_diffusion, fm)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Cascade file; relative paths resolve against `CASFT_DATA_DIR`. When
    /// absent, cascades are simulated from the `simulate` table.
    pub path: Option<PathBuf>,
    pub format: CascadeFormat,
    /// Named `(t_o, t_p)` window overriding the explicit values.
    pub preset: Option<String>,
    pub t_obs: f64,
    pub t_pred: f64,
    /// Number of future segments `l`.
    pub intervals: usize,
    pub min_observed: usize,
    pub split: SplitRatios,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: CascadeFormat::Jsonl,
            preset: None,
            t_obs: 20.0,
            t_pred: 100.0,
            intervals: 8,
            min_observed: 10,
            split: SplitRatios::default(),
            split_seed: 0,
        }
    }
}

impl DataConfig {
    /// Effective `(t_o, t_p)` after applying any preset.
    pub fn window(&self) -> Result<(f64, f64)> {
        match &self.preset {
            Some(p) => preset(p),
            None => Ok((self.t_obs, self.t_pred)),
        }
    }

    pub fn resolved_path(&self) -> Option<PathBuf> {
        let p = self.path.as_ref()?;
        if p.is_absolute() {
            return Some(p.clone());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(root) => Some(Path::new(&root).join(p)),
            None => Some(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Local embedding width, equal to the temporal encoding width.
    pub d_c: usize,
    pub d_g: usize,
    pub d_attn: usize,
    pub d_h: usize,
    pub head_width: usize,
    /// Width of the segment regressor in the `fm` variant.
    pub fm_width: usize,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            d_c: 64,
            d_g: 64,
            d_attn: 64,
            d_h: 32,
            head_width: 64,
            fm_width: 64,
            pooling: Pooling::Last,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub num_scales: usize,
    /// Largest characteristic-function sample point.
    pub max_point: f64,
    pub window: usize,
    pub negative: f64,
    pub dense_threshold: usize,
    pub samples_per_edge: usize,
    pub seed: u64,
    /// Directory for cached global embeddings; not part of the config hash.
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        let g = GlobalEmbedConfig::default();
        Self {
            num_scales: 2,
            max_point: 100.0,
            window: g.window,
            negative: g.negative,
            dense_threshold: g.dense_threshold,
            samples_per_edge: g.samples_per_edge,
            seed: 0,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub method: SolverMethod,
    pub rtol: f64,
    pub atol: f64,
    pub step: f64,
    pub max_steps: usize,
    pub cue_mode: CueMode,
    /// Time unit for integration; defaults to `t_o`.
    pub time_scale: Option<f64>,
}

impl Default for OdeConfig {
    fn default() -> Self {
        let s = SolverSpec::default();
        Self {
            method: s.method,
            rtol: s.rtol,
            atol: s.atol,
            step: 0.05,
            max_steps: s.max_steps,
            cue_mode: CueMode::Absolute,
            time_scale: None,
        }
    }
}

impl OdeConfig {
    pub fn spec(&self) -> SolverSpec {
        SolverSpec { method: self.method, rtol: self.rtol, atol: self.atol, step: self.step, max_steps: self.max_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub schedule: ScheduleKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub ddim_steps: usize,
    pub eta: f64,
    /// DDIM samples averaged per prediction.
    pub num_samples: usize,
    pub width: usize,
    pub depth: usize,
    pub step_dim: usize,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            schedule: ScheduleKind::Linear,
            beta_min: 1e-4,
            beta_max: 0.02,
            ddim_steps: 50,
            eta: 0.0,
            num_samples: 1,
            width: 128,
            depth: 3,
            step_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience on validation MSLE; 0 disables.
    pub patience: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Keep the parameters of the best validation epoch.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 100,
            patience: 10,
            gamma: 0.1,
            seed: 0,
            clip_norm: 5.0,
            restore_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub name: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("runs"), name: "casft".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub simulate: SimulationConfig,
    pub model: ModelConfig,
    pub embed: EmbedConfig,
    pub ode: OdeConfig,
    pub diff: DiffConfig,
    pub train: TrainConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let (t_o, t_p) = self.data.window()?;
        if !(t_o > 0.0 && t_p > t_o) {
            return Err(Error::Config(format!("need 0 < t_obs < t_pred, got ({t_o}, {t_p})")));
        }
        if self.data.intervals == 0 {
            return Err(Error::Config("data.intervals must be at least 1".into()));
        }
        self.data.split.validate().map_err(|e| Error::Config(e.to_string()))?;
        let m = &self.model;
        if m.d_c == 0 || m.d_c % 2 != 0 {
            return Err(Error::Config(format!("model.d_c is the temporal encoding width and must be even, got {}", m.d_c)));
        }
        if self.embed.num_scales == 0 || m.d_c % (2 * self.embed.num_scales) != 0 {
            return Err(Error::Config(format!(
                "model.d_c = {} must be a multiple of 2·embed.num_scales = {}",
                m.d_c,
                2 * self.embed.num_scales
            )));
        }
        if [m.d_g, m.d_attn, m.d_h, m.head_width, m.fm_width].contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        self.ode.spec().validate()?;
        if let Some(s) = self.ode.time_scale {
            if !(s > 0.0) {
                return Err(Error::Config("ode.time_scale must be positive".into()));
            }
        }
        let d = &self.diff;
        if d.ddim_steps == 0 || d.ddim_steps > d.k {
            return Err(Error::Config(format!("diff.ddim_steps must be in 1..=K ({}), got {}", d.k, d.ddim_steps)));
        }
        if d.k < 2 || d.num_samples == 0 || d.depth == 0 || d.width == 0 || !(d.eta >= 0.0) {
            return Err(Error::Config("diff: need K ≥ 2, num_samples ≥ 1, depth ≥ 1, width ≥ 1 and eta ≥ 0".into()));
        }
        let t = &self.train;
        if !(t.lr > 0.0) || t.batch_size == 0 || !(t.gamma >= 0.0) {
            return Err(Error::Config("train: need lr > 0, batch_size ≥ 1 and gamma ≥ 0".into()));
        }
        if self.data.path.is_none() {
            self.simulate.validate()?;
        }
        Ok(())
    }

    pub fn graphwave(&self) -> GraphWaveConfig {
        let points = self.model.d_c / (2 * self.embed.num_scales);
        GraphWaveConfig { num_scales: self.embed.num_scales, ..GraphWaveConfig::with_points(points, self.embed.max_point) }
    }

    pub fn global_embed(&self) -> GlobalEmbedConfig {
        GlobalEmbedConfig {
            dim: self.model.d_g,
            window: self.embed.window,
            negative: self.embed.negative,
            dense_threshold: self.embed.dense_threshold,
            samples_per_edge: self.embed.samples_per_edge,
            seed: self.embed.seed,
            ..Default::default()
        }
    }

    pub fn time_scale(&self) -> Result<f64> {
        Ok(self.ode.time_scale.unwrap_or(self.data.window()?.0))
    }

    /// SHA-256 over every field that affects results; output locations and
    /// cache directories are excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("run");
            if let Some(e) = obj.get_mut("embed").and_then(|e| e.as_object_mut()) {
                e.remove("cache_dir");
            }
            if self.data.path.is_some() {
                obj.remove("simulate");
            }
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&v).expect("value serialises"));
        hex::encode(h.finalize())
    }

    /// Applies a `section.key = value` override, with `value` in TOML syntax.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc: toml::Value = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut cur = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("`{key}` is not a table path")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let updated: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
