//! Seeded desk-scale data generator.
//!
//! Each compound class gets a cluster mean of norm `margin`; every frame of a
//! clip is that mean plus isotropic Gaussian noise. Frames are dropped from
//! the detection mask at rate `dropout` (their features are zeroed, as a face
//! extractor would leave them). Vote tables are drawn so that curation
//! recovers the generating label.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::curation::{write_votes, AnnotationRecord, VOTES_PER_CLIP};
use crate::error::{Error, Result};
use crate::eval::write_label_csv;
use crate::features::{write_features, VideoFeatures};
use crate::label_space::{BasicEmotion, CompoundSet, NUM_BASIC};
use crate::model::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub clips_per_class: usize,
    pub heldout_per_class: usize,
    pub singles_per_emotion: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub dim: usize,
    pub margin: f64,
    pub noise: f64,
    pub dropout: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clips_per_class: 30,
            heldout_per_class: 10,
            singles_per_emotion: 0,
            min_frames: 20,
            max_frames: 60,
            dim: 16,
            margin: 2.0,
            noise: 1.0,
            dropout: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.clips_per_class == 0 {
            return fail("clips_per_class must be at least 1");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return fail("frame range must satisfy 1 <= min_frames <= max_frames");
        }
        if self.dim == 0 {
            return fail("dim must be at least 1");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return fail("margin must be finite and non-negative");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// A generated clip together with its generating label.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub video: VideoFeatures,
    pub votes: AnnotationRecord,
    /// Compound class index, `None` for single-emotion clips.
    pub class: Option<usize>,
    pub emotion: Option<BasicEmotion>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<SynthClip>,
    pub heldout: Vec<SynthClip>,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl Generator<'_> {
    fn direction(&mut self, slot: usize) -> Vec<f64> {
        let d = self.spec.dim;
        if slot < d {
            let mut v = vec![0.0; d];
            v[slot] = self.spec.margin;
            return v;
        }
        let std = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..d).map(|_| std.sample(&mut self.rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| self.spec.margin * x / norm).collect()
    }

    fn video(&mut self, clip_id: String, mean: &[f64]) -> Result<VideoFeatures> {
        let n = self
            .rng
            .random_range(self.spec.min_frames..=self.spec.max_frames);
        let mut mask: Vec<bool> = (0..n)
            .map(|_| !self.rng.random_bool(self.spec.dropout))
            .collect();
        if !mask.iter().any(|&m| m) {
            let keep = self.rng.random_range(0..n);
            mask[keep] = true;
        }
        let mut feats = Mat::zeros(n, self.spec.dim);
        for (t, &detected) in mask.iter().enumerate() {
            for (c, &mu) in mean.iter().enumerate() {
                let x = mu + self.noise.sample(&mut self.rng);
                if detected {
                    *feats.at_mut(t, c) = x as f32;
                }
            }
        }
        VideoFeatures::new(clip_id, feats, mask)
    }

    /// Spread `remaining` votes over emotions not in `exclude`, at most two each.
    fn filler(
        &mut self,
        counts: &mut [u8; NUM_BASIC],
        exclude: &[BasicEmotion],
        mut remaining: u8,
    ) {
        while remaining > 0 {
            let open: Vec<usize> = (0..NUM_BASIC)
                .filter(|&i| !exclude.iter().any(|e| e.code() == i) && counts[i] < 2)
                .collect();
            let pick = open[self.rng.random_range(0..open.len())];
            counts[pick] += 1;
            remaining -= 1;
        }
    }

    fn shuffled(&mut self, clip_id: &str, counts: [u8; NUM_BASIC]) -> Result<AnnotationRecord> {
        let mut votes: Vec<BasicEmotion> = AnnotationRecord::from_counts(clip_id, counts)?
            .votes()
            .to_vec();
        votes.shuffle(&mut self.rng);
        AnnotationRecord::new(clip_id, votes)
    }

    fn compound_votes(
        &mut self,
        clip_id: &str,
        a: BasicEmotion,
        b: BasicEmotion,
    ) -> Result<AnnotationRecord> {
        let mut counts = [0u8; NUM_BASIC];
        let na = self.rng.random_range(3..=5u8);
        let nb = self.rng.random_range(3..=(10 - na).min(5));
        counts[a.code()] = na;
        counts[b.code()] = nb;
        self.filler(&mut counts, &[a, b], VOTES_PER_CLIP as u8 - na - nb);
        self.shuffled(clip_id, counts)
    }

    fn single_votes(&mut self, clip_id: &str, e: BasicEmotion) -> Result<AnnotationRecord> {
        let mut counts = [0u8; NUM_BASIC];
        let k = self.rng.random_range(7..=10u8);
        counts[e.code()] = k;
        self.filler(&mut counts, &[e], VOTES_PER_CLIP as u8 - k);
        self.shuffled(clip_id, counts)
    }
}

pub fn generate(spec: &SynthSpec, set: &CompoundSet, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
        noise: Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).unwrap(),
    };
    let class_means: Vec<Vec<f64>> = (0..set.len()).map(|c| g.direction(c)).collect();
    let single_means: Vec<Vec<f64>> = (0..NUM_BASIC).map(|e| g.direction(set.len() + e)).collect();

    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (c, compound) in set.members().iter().enumerate() {
        for (split, count, out) in [
            ("train", spec.clips_per_class, &mut train),
            ("test", spec.heldout_per_class, &mut heldout),
        ] {
            for i in 0..count {
                let id = format!("{split}_{}_{i:03}", compound.name());
                let video = g.video(id.clone(), &class_means[c])?;
                let votes = g.compound_votes(&id, compound.first, compound.second)?;
                out.push(SynthClip {
                    video,
                    votes,
                    class: Some(c),
                    emotion: None,
                });
            }
        }
    }
    for e in BasicEmotion::ALL {
        for i in 0..spec.singles_per_emotion {
            let id = format!("single_{}_{i:03}", e.name());
            let video = g.video(id.clone(), &single_means[e.code()])?;
            let votes = g.single_votes(&id, e)?;
            train.push(SynthClip {
                video,
                votes,
                class: None,
                emotion: Some(e),
            });
        }
    }
    Ok(SynthDataset { train, heldout })
}

pub struct SynthPaths {
    pub train_dir: PathBuf,
    pub heldout_dir: PathBuf,
    pub votes: PathBuf,
    pub truth: PathBuf,
    pub train_truth: PathBuf,
}

impl SynthPaths {
    pub fn under(root: &Path) -> Self {
        Self {
            train_dir: root.join("train"),
            heldout_dir: root.join("heldout"),
            votes: root.join("votes.csv"),
            truth: root.join("truth.csv"),
            train_truth: root.join("train_truth.csv"),
        }
    }
}

fn frame_rows(clips: &[SynthClip]) -> Vec<(String, usize, usize)> {
    let mut rows: Vec<(String, usize, usize)> = clips
        .iter()
        .filter_map(|c| c.class.map(|k| (c, k)))
        .flat_map(|(c, k)| (0..c.video.num_frames()).map(move |t| (c.video.clip_id.clone(), t, k)))
        .collect();
    rows.sort();
    rows
}

/// Write the dataset under `root`: `train/` and `heldout/` feature files,
/// `votes.csv` for the training clips, and frame-level `truth.csv`
/// (held-out) and `train_truth.csv`.
pub fn write_dataset(data: &SynthDataset, set: &CompoundSet, root: &Path) -> Result<SynthPaths> {
    let paths = SynthPaths::under(root);
    for dir in [&paths.train_dir, &paths.heldout_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for c in &data.train {
        write_features(&paths.train_dir, &c.video)?;
    }
    for c in &data.heldout {
        write_features(&paths.heldout_dir, &c.video)?;
    }
    let create = |p: &Path| std::fs::File::create(p).map_err(|e| Error::io(p, e));
    let mut records: Vec<AnnotationRecord> = data.train.iter().map(|c| c.votes.clone()).collect();
    records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    write_votes(create(&paths.votes)?, &records)?;
    write_label_csv(create(&paths.truth)?, set, frame_rows(&data.heldout))?;
    write_label_csv(create(&paths.train_truth)?, set, frame_rows(&data.train))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::{compound_from_votes, majority_single};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            clips_per_class: 4,
            heldout_per_class: 2,
            singles_per_emotion: 2,
            min_frames: 5,
            max_frames: 25,
            ..Default::default()
        }
    }

    #[test]
    fn votes_curate_back_to_generating_labels() {
        let set = CompoundSet::default();
        let data = generate(&small_spec(), &set, 11).unwrap();
        for clip in data.train.iter().chain(&data.heldout) {
            match (clip.class, clip.emotion) {
                (Some(c), None) => {
                    assert_eq!(compound_from_votes(&clip.votes, &set).unwrap().index, c);
                    assert_eq!(majority_single(&clip.votes), None);
                }
                (None, Some(e)) => {
                    assert_eq!(majority_single(&clip.votes), Some(e));
                    assert_eq!(compound_from_votes(&clip.votes, &set), None);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn shapes_and_masks() {
        let set = CompoundSet::default();
        let spec = SynthSpec {
            dropout: 0.9,
            ..small_spec()
        };
        let data = generate(&spec, &set, 2).unwrap();
        assert_eq!(data.train.len(), 7 * 4 + 7 * 2);
        assert_eq!(data.heldout.len(), 7 * 2);
        for c in data.train.iter().chain(&data.heldout) {
            let v = &c.video;
            assert!((5..=25).contains(&v.num_frames()));
            assert_eq!(v.dim(), 16);
            assert!(v.mask.iter().any(|&m| m));
            for (t, &m) in v.mask.iter().enumerate() {
                if !m {
                    assert!(v.features.row(t).iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let set = CompoundSet::default();
        let a = generate(&small_spec(), &set, 5).unwrap();
        let b = generate(&small_spec(), &set, 5).unwrap();
        let c = generate(&small_spec(), &set, 6).unwrap();
        let feats = |d: &SynthDataset| d.train.iter().map(|c| c.video.clone()).collect::<Vec<_>>();
        assert_eq!(feats(&a), feats(&b));
        assert_ne!(feats(&a), feats(&c));
    }

    #[test]
    fn invalid_specs_rejected() {
        let set = CompoundSet::default();
        for spec in [
            SynthSpec {
                min_frames: 0,
                ..Default::default()
            },
            SynthSpec {
                min_frames: 9,
                max_frames: 8,
                ..Default::default()
            },
            SynthSpec {
                margin: -1.0,
                ..Default::default()
            },
            SynthSpec {
                dropout: 1.0,
                ..Default::default()
            },
            SynthSpec {
                dim: 0,
                ..Default::default()
            },
        ] {
            assert!(generate(&spec, &set, 0).is_err());
        }
    }
}
