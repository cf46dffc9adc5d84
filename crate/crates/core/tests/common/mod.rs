#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use tlhn::cli::{cmd_curate, cmd_eval, cmd_predict, cmd_synth, cmd_train};
use tlhn::cli::{CurateArgs, EvalArgs, PredictArgs, SynthArgs, TrainArgs};

/// Everything a synthetic end-to-end run leaves behind.
pub struct RunArtifacts {
    pub checkpoint: Vec<u8>,
    pub predictions: Vec<u8>,
    pub report_json: Vec<u8>,
    pub report_text: String,
    pub train_accuracy: f64,
    pub macro_f1: f64,
    pub elapsed: Duration,
}

/// synth (7 × 30 clips, margin 2.0, D = 16) → curate → train (50 epochs,
/// batch 32) → predict on held-out clips → eval.
pub fn synthetic_run(root: &Path, seed: u64) -> RunArtifacts {
    let start = Instant::now();
    let data = root.join("data");
    cmd_synth(&SynthArgs {
        out: data.clone(),
        seed: Some(seed),
        clips_per_class: Some(30),
        heldout_per_class: Some(10),
        dim: Some(16),
        margin: Some(2.0),
        ..Default::default()
    })
    .expect("synth");
    let manifest = root.join("manifest.jsonl");
    cmd_curate(&CurateArgs {
        votes: data.join("votes.csv"),
        out: manifest.clone(),
        ..Default::default()
    })
    .expect("curate");
    let checkpoint = root.join("model.ckpt");
    let outcome = cmd_train(&TrainArgs {
        manifest: manifest.clone(),
        features: data.join("train"),
        out: checkpoint.clone(),
        metrics: Some(root.join("metrics.csv")),
        epochs: Some(50),
        batch_size: Some(32),
        seed: Some(seed),
        ..Default::default()
    })
    .expect("train");
    let pred = root.join("pred.csv");
    cmd_predict(&PredictArgs {
        checkpoint: checkpoint.clone(),
        features: data.join("heldout"),
        out: pred.clone(),
        manifest: Some(manifest.clone()),
        ..Default::default()
    })
    .expect("predict");
    let json = root.join("report.json");
    let report = cmd_eval(&EvalArgs {
        pred: pred.clone(),
        truth: data.join("truth.csv"),
        manifest: Some(manifest),
        json: Some(json.clone()),
    })
    .expect("eval");
    let elapsed = start.elapsed();
    RunArtifacts {
        checkpoint: std::fs::read(checkpoint).unwrap(),
        predictions: std::fs::read(pred).unwrap(),
        report_json: std::fs::read(json).unwrap(),
        report_text: report.to_text(),
        train_accuracy: outcome.log.last().unwrap().accuracy,
        macro_f1: report.macro_f1,
        elapsed,
    }
}
