use tlhn::curation::{build_manifest, BalanceConfig, EntryLabel, ManifestEntry, TrainingManifest};
use tlhn::eval::{score_maps, FrameKey};
use tlhn::features::{MemoryStore, VideoFeatures};
use tlhn::inference::Predictor;
use tlhn::label_space::{CompoundSet, VaSigns};
use tlhn::model::{encode_checkpoint, Mat};
use tlhn::synth::{generate, SynthDataset, SynthSpec};
use tlhn::trainer::{expand_samples, train, AnchorPolicy, TrainConfig};
use tlhn::Error;

fn clip(id: &str, n: usize) -> VideoFeatures {
    VideoFeatures::new(
        id,
        Mat::from_fn(n, 3, |r, c| (r + c) as f32 * 0.1),
        vec![true; n],
    )
    .unwrap()
}

fn entry(set: &CompoundSet, id: &str, class: usize, va_only: bool) -> ManifestEntry {
    let label = set.label(class).unwrap();
    ManifestEntry {
        clip_id: id.into(),
        label: EntryLabel::Compound(label),
        va: Some(label.compound.va_target()),
        va_only,
    }
}

#[test]
fn expansion_counts_and_targets() {
    let set = CompoundSet::default();
    let mut store = MemoryStore::new();
    store.insert(clip("a", 20));
    store.insert(clip("b", 9));

    let one = TrainingManifest {
        compound_set: set.clone(),
        entries: vec![entry(&set, "a", 1, false)],
    };
    let items = expand_samples(&one, &store, AnchorPolicy::Midpoint, 15).unwrap();
    assert_eq!(items.len(), 3);
    assert!(items
        .iter()
        .all(|i| i.anchor == 10 && i.target.class == Some(1)));
    assert!(items
        .iter()
        .all(|i| i.sequence.rows == 15 && i.sequence.cols == 3));

    let two = TrainingManifest {
        compound_set: set.clone(),
        entries: vec![entry(&set, "a", 1, false), entry(&set, "b", 5, true)],
    };
    let items = expand_samples(&two, &store, AnchorPolicy::Uniform(2), 15).unwrap();
    assert_eq!(items.len(), 12);
    for i in items.iter().filter(|i| i.clip_id == "b") {
        assert_eq!(i.target.class, None);
        assert_eq!(i.target.va, Some(VaSigns::from_pair([-1, -1]).unwrap()));
    }

    let missing = TrainingManifest {
        compound_set: set.clone(),
        entries: vec![entry(&set, "zzz", 0, false)],
    };
    match expand_samples(&missing, &store, AnchorPolicy::Midpoint, 15) {
        Err(Error::Data(msg)) => assert!(msg.contains("zzz")),
        other => panic!("{other:?}"),
    }
}

fn small_data(seed: u64, margin: f64) -> SynthDataset {
    let spec = SynthSpec {
        clips_per_class: 6,
        heldout_per_class: 3,
        min_frames: 10,
        max_frames: 24,
        dim: 8,
        margin,
        ..Default::default()
    };
    generate(&spec, &CompoundSet::default(), seed).unwrap()
}

fn fit(
    data: &SynthDataset,
    config: &TrainConfig,
) -> (TrainingManifest, tlhn::trainer::TrainOutcome) {
    let set = CompoundSet::default();
    let records: Vec<_> = data.train.iter().map(|c| c.votes.clone()).collect();
    let manifest = build_manifest(&records, &set, BalanceConfig::default()).unwrap();
    let mut store = MemoryStore::new();
    for c in &data.train {
        store.insert(c.video.clone());
    }
    let outcome = train(config, &manifest, &store).unwrap();
    (manifest, outcome)
}

fn small_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 3e-3,
        seed,
        hidden: 16,
        heads: 2,
        ..Default::default()
    }
}

fn heldout_f1(data: &SynthDataset, outcome: &tlhn::trainer::TrainOutcome) -> f64 {
    let set = CompoundSet::default();
    let predictor = Predictor::new(outcome.params.clone(), set.clone());
    let mut pred = std::collections::BTreeMap::<FrameKey, usize>::new();
    let mut truth = pred.clone();
    for c in &data.heldout {
        for (t, f) in predictor
            .predict_video(&c.video)
            .unwrap()
            .into_iter()
            .enumerate()
        {
            pred.insert((c.video.clip_id.clone(), t), f.label.index);
            truth.insert((c.video.clip_id.clone(), t), c.class.unwrap());
        }
    }
    score_maps(&pred, &truth, &set).unwrap().macro_f1
}

#[test]
fn curation_recovers_generated_labels() {
    let data = small_data(1, 2.0);
    let (manifest, _) = fit(&data, &small_config(0, 1));
    assert_eq!(manifest.entries.len(), data.train.len());
    for e in &manifest.entries {
        let source = data
            .train
            .iter()
            .find(|c| c.video.clip_id == e.clip_id)
            .unwrap();
        assert_eq!(Some(e.label.class().index), source.class);
    }
}

#[test]
fn training_is_reproducible_and_learns() {
    let data = small_data(2, 3.0);
    let (_, a) = fit(&data, &small_config(4, 20));
    let (_, b) = fit(&data, &small_config(4, 20));
    let (_, c) = fit(&data, &small_config(5, 20));
    assert_eq!(encode_checkpoint(&a.params), encode_checkpoint(&b.params));
    assert_eq!(a.log, b.log);
    assert_ne!(encode_checkpoint(&a.params), encode_checkpoint(&c.params));
    assert!(a.log.last().unwrap().loss < a.log[0].loss);
    assert!(a.log.last().unwrap().accuracy > 0.9, "{:?}", a.log.last());
}

#[test]
fn no_signal_means_near_chance() {
    let data = small_data(3, 0.0);
    let (_, outcome) = fit(&data, &small_config(1, 20));
    let f1 = heldout_f1(&data, &outcome);
    assert!(f1 < 0.5, "macro F1 {f1} with zero margin");
}

#[test]
fn empty_manifest_is_a_data_error() {
    let manifest = TrainingManifest {
        compound_set: CompoundSet::default(),
        entries: vec![],
    };
    let r = train(&TrainConfig::default(), &manifest, &MemoryStore::new());
    assert!(matches!(r, Err(Error::Data(_))));
}
