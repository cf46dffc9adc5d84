//! Mini-batch training over pyramid-expanded manifest entries.
//!
//! Every anchor frame of every clip yields three items (local, quarter and
//! global sequence) with the clip's targets. Items are shuffled each epoch,
//! gradients are averaged over each batch and applied with Adam; the final
//! partial batch is kept.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curation::{EntryLabel, TrainingManifest};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::model::{
    adam_step, backward, forward, AdamConfig, AdamState, LossWeights, Mat, ModelConfig,
    ModelParams, Target,
};
use crate::pyramid::{pyramid, uniform_sample, FallbackTable, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorPolicy {
    /// One anchor at frame `N / 2`.
    Midpoint,
    /// `k` anchors spread evenly over the clip.
    Uniform(usize),
}

impl AnchorPolicy {
    pub fn anchors(&self, n: usize) -> Result<Vec<usize>> {
        match *self {
            AnchorPolicy::Midpoint => Ok(vec![n / 2]),
            AnchorPolicy::Uniform(k) => uniform_sample(0, n, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub class_loss_weight: f64,
    pub va_loss_weight: f64,
    pub anchors: AnchorPolicy,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 90,
            lr: 3e-4,
            seed: 0,
            class_loss_weight: 1.0,
            va_loss_weight: 1.0,
            anchors: AnchorPolicy::Midpoint,
            hidden: 64,
            layers: 1,
            heads: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.class_loss_weight < 0.0 || self.va_loss_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if let AnchorPolicy::Uniform(0) = self.anchors {
            return Err(Error::Config("anchor count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            seq_len: crate::pyramid::SEQ_LEN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub clip_id: String,
    pub anchor: usize,
    pub scale: Scale,
    pub sequence: Mat<f32>,
    pub target: Target,
}

impl TrainingItem {
    pub fn id(&self) -> String {
        format!("{}@{}:{}", self.clip_id, self.anchor, self.scale.name())
    }
}

fn entry_target(
    label: &EntryLabel,
    va: Option<crate::label_space::VaSigns>,
    va_only: bool,
) -> Target {
    match *label {
        EntryLabel::Compound(c) => Target {
            class: (!va_only).then_some(c.index),
            va,
        },
        EntryLabel::Basic { balances, .. } => Target {
            class: (!va_only).then_some(balances.index),
            va,
        },
    }
}

pub fn expand_samples(
    manifest: &TrainingManifest,
    store: &dyn FeatureStore,
    anchors: AnchorPolicy,
    seq_len: usize,
) -> Result<Vec<TrainingItem>> {
    let mut items = Vec::new();
    for entry in &manifest.entries {
        let target = entry_target(&entry.label, entry.va, entry.va_only);
        if target.mode().is_none() {
            log::warn!("clip `{}` has no usable target, skipped", entry.clip_id);
            continue;
        }
        let video = store.load(&entry.clip_id)?;
        let n = video.num_frames();
        let table = FallbackTable::new(&video.mask)
            .map_err(|e| Error::Data(format!("clip `{}`: {e}", entry.clip_id)))?;
        for anchor in anchors.anchors(n)? {
            let sample = pyramid(anchor, n, seq_len)?;
            for scale in Scale::ALL {
                let frames = table.resolve_all(sample.sequence(scale));
                items.push(TrainingItem {
                    clip_id: entry.clip_id.clone(),
                    anchor,
                    scale,
                    sequence: video.gather(&frames),
                    target,
                });
            }
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    /// Mean per-item loss.
    pub loss: f64,
    /// Class accuracy over items with a class target.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub log: Vec<EpochMetrics>,
}

struct ItemResult {
    loss: f32,
    grads: ModelParams<f32>,
    correct: Option<bool>,
}

fn run_item(
    params: &ModelParams<f32>,
    item: &TrainingItem,
    weights: LossWeights,
) -> Result<ItemResult> {
    let out = forward(params, &item.sequence)?;
    let mode = item
        .target
        .mode()
        .expect("expand_samples drops empty targets");
    let (loss, grads) = backward(params, &out, &item.target, mode, weights)?;
    let correct = item.target.class.map(|y| {
        let z = &out.class_logits;
        let mut best = 0;
        for i in 1..z.len() {
            if z[i] > z[best] {
                best = i;
            }
        }
        best == y
    });
    Ok(ItemResult {
        loss,
        grads,
        correct,
    })
}

/// Partition of `0..n` into consecutive batches of at most `size`.
pub fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

pub fn train_items(config: &TrainConfig, items: &[TrainingItem]) -> Result<TrainOutcome> {
    config.validate()?;
    let first = items
        .first()
        .ok_or_else(|| Error::Data("no training items".into()))?;
    let model_cfg = config.model_config(first.sequence.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::<f32>::init(model_cfg, &mut rng)?;
    let mut state = AdamState::new(&params);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let weights = LossWeights {
        class: config.class_loss_weight,
        va: config.va_loss_weight,
    };

    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut scored) = (0f64, 0usize, 0usize);
        for (bi, batch) in batches(&order, config.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| run_item(&params, &items[i], weights))
                .collect::<Result<Vec<_>>>()?;
            let bad: Vec<String> = batch
                .iter()
                .zip(&results)
                .filter(|(_, r)| !r.loss.is_finite())
                .map(|(&i, _)| items[i].id())
                .collect();
            if !bad.is_empty() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}, items {}",
                    bad.join(", ")
                )));
            }
            let mut total = params.zeros_like();
            for r in &results {
                total.add_scaled(&r.grads, 1.0);
                loss_sum += r.loss as f64;
                if let Some(c) = r.correct {
                    scored += 1;
                    correct += c as usize;
                }
            }
            let mut mean = params.zeros_like();
            mean.add_scaled(&total, 1.0 / batch.len() as f32);
            adam_step(&mut params, &mean, &mut state, &adam);
        }
        if !params.is_finite() {
            return Err(Error::Numeric(format!(
                "parameters diverged at epoch {epoch}"
            )));
        }
        let metrics = EpochMetrics {
            epoch,
            split: "train".into(),
            loss: loss_sum / items.len() as f64,
            accuracy: if scored == 0 {
                0.0
            } else {
                correct as f64 / scored as f64
            },
        };
        log::info!(
            "epoch {epoch}: loss {:.4} accuracy {:.4}",
            metrics.loss,
            metrics.accuracy
        );
        log.push(metrics);
    }
    Ok(TrainOutcome { params, log })
}

pub fn train(
    config: &TrainConfig,
    manifest: &TrainingManifest,
    store: &dyn FeatureStore,
) -> Result<TrainOutcome> {
    config.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::Data("manifest has no entries".into()));
    }
    let items = expand_samples(manifest, store, config.anchors, crate::pyramid::SEQ_LEN)?;
    train_items(config, &items)
}

pub fn write_metrics<W: Write>(writer: W, log: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "split", "loss", "accuracy"])?;
    for m in log {
        w.write_record([
            m.epoch.to_string(),
            m.split.clone(),
            format!("{:.6}", m.loss),
            format!("{:.6}", m.accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}
