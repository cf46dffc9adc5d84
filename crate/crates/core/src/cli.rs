//! Command-line front end.
//!
//! Every tunable is an optional flag. A value is taken from the flag if
//! given, else from the `--config` file (`key = value` lines, `#` starts a
//! comment, keys spelled like the flags with `-` or `_`), else the default.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::curation::{
    build_manifest, read_compound_set, read_votes_file, write_manifest, BalanceConfig,
    TrainingManifest,
};
use crate::error::{Error, Result};
use crate::eval::{score_files, write_label_csv, Report};
use crate::features::{DirStore, FeatureStore};
use crate::inference::Predictor;
use crate::label_space::CompoundSet;
use crate::model::{load_checkpoint, save_checkpoint};
use crate::synth::{generate, write_dataset, SynthPaths, SynthSpec};
use crate::trainer::{train, write_metrics, AnchorPolicy, TrainConfig, TrainOutcome};

#[derive(Debug, Parser)]
#[command(
    name = "tlhn",
    version,
    about = "Compound facial expression recognition over temporal pyramids"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn an annotator vote table into a training manifest.
    Curate(CurateArgs),
    /// Train a model from a manifest and a feature directory.
    Train(TrainArgs),
    /// Write per-frame predictions for every video in a feature directory.
    Predict(PredictArgs),
    /// Score predictions against frame-level truth.
    Eval(EvalArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub votes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Entries per class after balancing (default: largest class count).
    #[arg(long)]
    pub target_count: Option<usize>,
    /// Whether balancing supplements train the VA head only.
    #[arg(long)]
    pub supplements_va_only: Option<bool>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub class_loss_weight: Option<f64>,
    #[arg(long)]
    pub va_loss_weight: Option<f64>,
    /// Anchor frames per clip, spread evenly (default: one, at the midpoint).
    #[arg(long)]
    pub anchors: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest whose compound set the model was trained on.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub va_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clips_per_class: Option<usize>,
    #[arg(long)]
    pub heldout_per_class: Option<usize>,
    #[arg(long)]
    pub singles_per_emotion: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

/// Parsed `key = value` file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    origin: PathBuf,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path, allowed: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`",
                    origin.display(),
                    i + 1
                ))
            })?;
            let key = k.trim().replace('-', "_");
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}:{}: unknown key `{key}`",
                    origin.display(),
                    i + 1
                )));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self {
            values,
            origin: origin.to_path_buf(),
        })
    }

    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text, p, allowed)
            }
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::Config(format!(
                        "{}: bad value `{v}` for `{key}`",
                        self.origin.display()
                    ))
                })
            })
            .transpose()
    }

    /// Flag, then file, then default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn compound_set(manifest: Option<&Path>) -> Result<CompoundSet> {
    manifest.map_or_else(|| Ok(CompoundSet::default()), read_compound_set)
}

pub fn cmd_curate(args: &CurateArgs) -> Result<TrainingManifest> {
    let cfg = ConfigFile::load(
        args.config.as_deref(),
        &["target_count", "supplements_va_only"],
    )?;
    let balance = BalanceConfig {
        target_count: args.target_count.or(cfg.get("target_count")?),
        supplements_va_only: cfg.pick(args.supplements_va_only, "supplements_va_only", true)?,
    };
    let records = read_votes_file(&args.votes)?;
    let manifest = build_manifest(&records, &CompoundSet::default(), balance)?;
    write_manifest(create(&args.out)?, &manifest)?;
    log::info!(
        "{} entries written to {} (per class {:?})",
        manifest.entries.len(),
        args.out.display(),
        manifest.class_counts()
    );
    Ok(manifest)
}

const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "class_loss_weight",
    "va_loss_weight",
    "anchors",
    "hidden",
    "layers",
    "heads",
];

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let cfg = ConfigFile::load(args.config.as_deref(), TRAIN_KEYS)?;
    let d = TrainConfig::default();
    let anchors = match args.anchors.or(cfg.get("anchors")?) {
        None => AnchorPolicy::Midpoint,
        Some(k) => AnchorPolicy::Uniform(k),
    };
    let config = TrainConfig {
        epochs: cfg.pick(args.epochs, "epochs", d.epochs)?,
        batch_size: cfg.pick(args.batch_size, "batch_size", d.batch_size)?,
        lr: cfg.pick(args.lr, "lr", d.lr)?,
        seed: cfg.pick(args.seed, "seed", d.seed)?,
        class_loss_weight: cfg.pick(
            args.class_loss_weight,
            "class_loss_weight",
            d.class_loss_weight,
        )?,
        va_loss_weight: cfg.pick(args.va_loss_weight, "va_loss_weight", d.va_loss_weight)?,
        anchors,
        hidden: cfg.pick(args.hidden, "hidden", d.hidden)?,
        layers: cfg.pick(args.layers, "layers", d.layers)?,
        heads: cfg.pick(args.heads, "heads", d.heads)?,
    };
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let config = train_config(args)?;
    let manifest = crate::curation::read_manifest_file(&args.manifest)?;
    let store = DirStore::new(&args.features);
    let outcome = train(&config, &manifest, &store)?;
    save_checkpoint(&outcome.params, &args.out)?;
    if let Some(path) = &args.metrics {
        write_metrics(create(path)?, &outcome.log)?;
    }
    Ok(outcome)
}

/// Returns the number of rows written.
pub fn cmd_predict(args: &PredictArgs) -> Result<usize> {
    let cfg = ConfigFile::load(args.config.as_deref(), &["va_threshold"])?;
    let params = load_checkpoint::<f32>(&args.checkpoint)?;
    let mut predictor = Predictor::new(params, compound_set(args.manifest.as_deref())?);
    predictor.va_threshold = cfg.pick(args.va_threshold, "va_threshold", 0.5)?;
    let store = DirStore::new(&args.features);
    let mut rows = Vec::new();
    for id in store.clip_ids()? {
        let video = store.load(&id)?;
        let preds = predictor.predict_video(&video)?;
        rows.extend(
            preds
                .into_iter()
                .enumerate()
                .map(|(t, p)| (id.clone(), t, p.label.index)),
        );
    }
    let count = rows.len();
    write_label_csv(create(&args.out)?, &predictor.compound_set, rows)?;
    Ok(count)
}

/// The binary prints [`Report::to_text`] to standard output.
pub fn cmd_eval(args: &EvalArgs) -> Result<Report> {
    let set = compound_set(args.manifest.as_deref())?;
    let report = score_files(&args.pred, &args.truth, &set)?;
    if let Some(path) = &args.json {
        std::fs::write(path, report.to_json()? + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

const SYNTH_KEYS: &[&str] = &[
    "seed",
    "clips_per_class",
    "heldout_per_class",
    "singles_per_emotion",
    "min_frames",
    "max_frames",
    "dim",
    "margin",
    "noise",
    "dropout",
];

pub fn synth_spec(args: &SynthArgs) -> Result<(SynthSpec, u64)> {
    let cfg = ConfigFile::load(args.config.as_deref(), SYNTH_KEYS)?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        clips_per_class: cfg.pick(args.clips_per_class, "clips_per_class", d.clips_per_class)?,
        heldout_per_class: cfg.pick(
            args.heldout_per_class,
            "heldout_per_class",
            d.heldout_per_class,
        )?,
        singles_per_emotion: cfg.pick(
            args.singles_per_emotion,
            "singles_per_emotion",
            d.singles_per_emotion,
        )?,
        min_frames: cfg.pick(args.min_frames, "min_frames", d.min_frames)?,
        max_frames: cfg.pick(args.max_frames, "max_frames", d.max_frames)?,
        dim: cfg.pick(args.dim, "dim", d.dim)?,
        margin: cfg.pick(args.margin, "margin", d.margin)?,
        noise: cfg.pick(args.noise, "noise", d.noise)?,
        dropout: cfg.pick(args.dropout, "dropout", d.dropout)?,
    };
    spec.validate()?;
    Ok((spec, cfg.pick(args.seed, "seed", 0)?))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthPaths> {
    let (spec, seed) = synth_spec(args)?;
    let set = CompoundSet::default();
    let data = generate(&spec, &set, seed)?;
    let paths = write_dataset(&data, &set, &args.out)?;
    log::info!(
        "{} training and {} held-out clips written under {}",
        data.train.len(),
        data.heldout.len(),
        args.out.display()
    );
    Ok(paths)
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Curate(a) => cmd_curate(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Predict(a) => cmd_predict(a).map(drop),
        Command::Eval(a) => cmd_eval(a).map(|r| println!("{}", r.to_text())),
        Command::Synth(a) => cmd_synth(a).map(drop),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command))
}
