use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use casft::data::{simulate_hawkes_cascades, write_cascades, CascadeFormat, SplitName, SplitRatios};
use casft::harness::ablate::{wins, write_ablation_csv};
use casft::harness::evaluate::{write_json, write_predictions_csv};
use casft::harness::prepare::{compute_global, label_and_split, load_cascades, PreprocessSummary};
use casft::harness::sweep::{plot_sweep, write_sweep_csv};
use casft::harness::{
    ablate, baseline_feature_mlp, evaluate_split, init_model, prepare, prepare_from, sweep, train, Checkpoint,
    ExperimentConfig, Runtime, SweepAxis, Variant,
};

#[derive(Parser)]
#[command(name = "casft", version, about = "Cascade popularity prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("applying `{o}`"))?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic Hawkes cascades as JSON lines.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label, filter and split a cascade file and precompute global embeddings.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: CascadeFormat,
        #[arg(long)]
        t_obs: f64,
        #[arg(long)]
        t_pred: f64,
        #[arg(long, default_value_t = 10)]
        min_observed: usize,
        #[arg(long, default_value = "0.7,0.15,0.15")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        intervals: usize,
        #[arg(long, default_value = "prepared")]
        out: PathBuf,
        /// Directory for the global-embedding cache.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint and epoch log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Require the checkpoint to match this config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare model variants on shared data.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "full,no_ft,no_ode,no_diffusion,fm")]
        variants: Vec<Variant>,
        /// Training seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Train and test once per value of one hyperparameter.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Train the hand-crafted-feature MLP baseline.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run_dir(cfg: &ExperimentConfig, suffix: &str) -> Result<PathBuf> {
    let dir = cfg.run.out_dir.join(format!("{}{suffix}", cfg.run.name));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn parse_split(s: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().context("split ratios")?;
    let [train, val, test] = parts[..] else { bail!("--split needs three comma-separated ratios") };
    let r = SplitRatios { train, val, test };
    r.validate()?;
    Ok(r)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate { cfg, out } => {
            let cfg = cfg.load()?;
            let cascades = simulate_hawkes_cascades(&cfg.simulate)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = create(&out)?;
            write_cascades(&mut w, &cascades)?;
            w.flush()?;
            println!("wrote {} cascades to {}", cascades.len(), out.display());
        }
        Command::Preprocess { input, format, t_obs, t_pred, min_observed, split, seed, intervals, out, cache_dir } => {
            let mut cfg = ExperimentConfig::default();
            cfg.data.path = Some(input);
            cfg.data.format = format;
            cfg.data.t_obs = t_obs;
            cfg.data.t_pred = t_pred;
            cfg.data.min_observed = min_observed;
            cfg.data.split = parse_split(&split)?;
            cfg.data.split_seed = seed;
            cfg.data.intervals = intervals;
            cfg.embed.cache_dir = cache_dir;
            cfg.validate()?;
            let cascades = load_cascades(&cfg)?;
            let ds = label_and_split(&cfg, &cascades)?;
            std::fs::create_dir_all(&out)?;
            let summary = PreprocessSummary {
                total: cascades.len(),
                kept: ds.train.len() + ds.val.len() + ds.test.len(),
                train: ds.train.len(),
                val: ds.val.len(),
                test: ds.test.len(),
            };
            write_json(&out.join("manifest.json"), &ds.manifest())?;
            write_json(&out.join("summary.json"), &summary)?;
            let mut w = create(&out.join("labels.jsonl"))?;
            for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
                for s in ds.part(split) {
                    let row = serde_json::json!({ "split": split, "sample": s });
                    writeln!(w, "{row}")?;
                }
            }
            w.flush()?;
            if cfg.embed.cache_dir.is_some() {
                let kept: std::collections::HashSet<&str> = ds.train.iter().chain(&ds.val).chain(&ds.test).map(|s| s.cascade_id.as_str()).collect();
                let kept: Vec<_> = cascades.iter().filter(|c| kept.contains(&c.cascade_id.as_str())).collect();
                compute_global(&cfg, &kept)?;
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Train { cfg } => {
            let cfg = cfg.load()?;
            let data = prepare(&cfg, None)?;
            let rt = Runtime::new(&cfg)?;
            let (model, mut store) = init_model(&cfg);
            let outcome = train(&cfg, &model, &mut store, &data, &rt)?;
            let dir = run_dir(&cfg, "")?;
            std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
            let mut log = create(&dir.join("epochs.jsonl"))?;
            for e in &outcome.history {
                writeln!(log, "{}", serde_json::to_string(e)?)?;
            }
            log.flush()?;
            let ck = Checkpoint::new(&cfg, &model, &store, &data.normalizer, &data.global, outcome.best_epoch, outcome.best_val_msle);
            ck.save(&dir.join("checkpoint.json"))?;
            write_json(&dir.join("train_summary.json"), &outcome)?;
            println!("checkpoint written to {}", dir.join("checkpoint.json").display());
        }
        Command::Evaluate { ckpt, split, config, out } => {
            let expected = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let ck = Checkpoint::load(&ckpt, expected.as_ref())?;
            let data = prepare(&ck.config, Some(ck.global.clone()))?;
            let rt = Runtime::new(&ck.config)?;
            let (report, records) = evaluate_split(&ck.model, &ck.params, &data, split, &rt, &ck.config_hash)?;
            let dir = out.unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
            write_json(&dir.join(format!("report_{split}.json")), &report)?;
            let mut w = create(&dir.join(format!("predictions_{split}.csv")))?;
            write_predictions_csv(&mut w, &records)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { cfg, variants, seeds } => {
            let cfg = cfg.load()?;
            let seeds = if seeds.is_empty() { vec![cfg.train.seed] } else { seeds };
            let data = prepare(&cfg, None)?;
            let rows = ablate(&cfg, &variants, &seeds, &data)?;
            let dir = run_dir(&cfg, "_ablation")?;
            write_ablation_csv(create(&dir.join("ablation.csv"))?, &rows)?;
            write_json(&dir.join("ablation.json"), &rows)?;
            for r in &rows {
                println!("seed {:>4}  {:<13} msle {:.4}  mape {:.4}  ddim_calls {}", r.seed, r.variant.name(), r.msle, r.mape, r.ddim_calls);
            }
            if variants.contains(&Variant::Full) && variants.contains(&Variant::NoFt) {
                let (w, n) = wins(&rows, Variant::Full, Variant::NoFt);
                println!("full beats no_ft in {w}/{n} seeds");
            }
        }
        Command::Sweep { cfg, axis, values } => {
            let cfg = cfg.load()?;
            let cascades = load_cascades(&cfg)?;
            let data = prepare_from(&cfg, &cascades, None)?;
            let rows = sweep(&cfg, axis, &values, &cascades, &data)?;
            let dir = run_dir(&cfg, "_sweep")?;
            write_sweep_csv(create(&dir.join(format!("sweep_{}.csv", axis.name())))?, &rows)?;
            plot_sweep(&dir.join(format!("sweep_{}.svg", axis.name())), &rows)?;
            for r in &rows {
                println!("{} = {:<14} msle {:.4}  mape {:.4}", axis.name(), r.value, r.msle, r.mape);
            }
        }
        Command::Baseline { cfg } => {
            let cfg = cfg.load()?;
            let data = prepare(&cfg, None)?;
            let (_, _, report) = baseline_feature_mlp(&cfg, &data)?;
            let dir = run_dir(&cfg, "_baseline")?;
            write_json(&dir.join("report.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
