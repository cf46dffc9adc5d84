//! Frame-level prediction: pyramid, three forward passes, score fusion and
//! VA gating.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::VideoFeatures;
use crate::label_space::{
    gate, va_signs, ClassScores, CompoundLabel, CompoundSet, VASignPrediction,
};
use crate::model::{forward, probabilities, Mat, ModelParams, Scalar};
use crate::pyramid::{face_fallback, pyramid, FallbackTable};

/// Elementwise mean of per-scale class scores.
pub fn fuse(scores: &[ClassScores]) -> Result<ClassScores> {
    let first = scores
        .first()
        .ok_or_else(|| Error::Argument("nothing to fuse".into()))?;
    if let Some(bad) = scores.iter().find(|s| s.len() != first.len()) {
        return Err(Error::Argument(format!(
            "score vectors differ in length ({} vs {})",
            first.len(),
            bad.len()
        )));
    }
    let n = scores.len() as f64;
    let fused = (0..first.len())
        .map(|i| scores.iter().map(|s| s.0[i]).sum::<f64>() / n)
        .collect();
    Ok(ClassScores(fused))
}

pub fn fuse_va(preds: &[VASignPrediction]) -> Result<VASignPrediction> {
    if preds.is_empty() {
        return Err(Error::Argument("nothing to fuse".into()));
    }
    let n = preds.len() as f64;
    Ok(VASignPrediction {
        p_valence_pos: preds.iter().map(|p| p.p_valence_pos).sum::<f64>() / n,
        p_arousal_pos: preds.iter().map(|p| p.p_arousal_pos).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub label: CompoundLabel,
    pub scores: ClassScores,
    pub va: VASignPrediction,
}

/// Frozen parameters plus the label space they were trained for.
#[derive(Debug, Clone)]
pub struct Predictor<T> {
    pub params: ModelParams<T>,
    pub compound_set: CompoundSet,
    pub va_threshold: f64,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(params: ModelParams<T>, compound_set: CompoundSet) -> Self {
        Self {
            params,
            compound_set,
            va_threshold: 0.5,
        }
    }

    fn check_video(&self, video: &VideoFeatures) -> Result<()> {
        if video.dim() != self.params.config.input_dim {
            return Err(Error::Data(format!(
                "clip `{}` has feature width {}, model expects {}",
                video.clip_id,
                video.dim(),
                self.params.config.input_dim
            )));
        }
        Ok(())
    }

    fn scores_of(&self, seq: &Mat<T>) -> Result<(ClassScores, VASignPrediction)> {
        Ok(probabilities(&forward(&self.params, seq)?))
    }

    fn decide(&self, per_scale: &[(ClassScores, VASignPrediction)]) -> Result<FramePrediction> {
        let scores: Vec<ClassScores> = per_scale.iter().map(|(s, _)| s.clone()).collect();
        let vas: Vec<VASignPrediction> = per_scale.iter().map(|(_, v)| *v).collect();
        let scores = fuse(&scores)?;
        let va = fuse_va(&vas)?;
        let label = gate(
            &self.compound_set,
            &scores,
            va_signs(va, self.va_threshold)?,
        )?;
        Ok(FramePrediction { label, scores, va })
    }

    /// One frame, straight through: no sharing between frames.
    pub fn predict_frame(&self, video: &VideoFeatures, t: usize) -> Result<FramePrediction> {
        self.check_video(video)?;
        let n = video.num_frames();
        let sample = pyramid(t, n, self.params.config.seq_len)?;
        let mut per_scale = Vec::with_capacity(3);
        for seq in sample.sequences() {
            let resolved = seq
                .iter()
                .map(|&i| face_fallback(&video.mask, i))
                .collect::<Result<Vec<_>>>()?;
            per_scale.push(self.scores_of(&video.gather(&resolved).cast())?);
        }
        self.decide(&per_scale)
    }

    /// Every frame of a video, in order.
    ///
    /// Frames in the same quarter share their quarter sequence and all frames
    /// share the global one, so each distinct resolved sequence is evaluated
    /// once and reused.
    pub fn predict_video(&self, video: &VideoFeatures) -> Result<Vec<FramePrediction>> {
        self.check_video(video)?;
        let n = video.num_frames();
        let table = FallbackTable::new(&video.mask)?;
        let seq_len = self.params.config.seq_len;

        let mut frame_keys: Vec<[Vec<usize>; 3]> = Vec::with_capacity(n);
        let mut unique: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for t in 0..n {
            let sample = pyramid(t, n, seq_len)?;
            let keys = sample.sequences().map(|s| table.resolve_all(s));
            for k in &keys {
                let next = unique.len();
                unique.entry(k.clone()).or_insert(next);
            }
            frame_keys.push(keys);
        }

        let mut ordered: Vec<(&Vec<usize>, usize)> = unique.iter().map(|(k, &i)| (k, i)).collect();
        ordered.sort_by_key(|&(_, i)| i);
        let outputs = ordered
            .par_iter()
            .map(|(seq, _)| self.scores_of(&video.gather(seq).cast()))
            .collect::<Result<Vec<_>>>()?;

        frame_keys
            .par_iter()
            .map(|keys| {
                let per_scale: Vec<_> = keys.iter().map(|k| outputs[unique[k]].clone()).collect();
                self.decide(&per_scale)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_examples() {
        let v = ClassScores(vec![0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.1]);
        let same = fuse(&[v.clone(), v.clone(), v.clone()]).unwrap();
        for (a, b) in same.as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }

        let e = |i: usize| ClassScores((0..7).map(|j| if i == j { 1.0 } else { 0.0 }).collect());
        let f = fuse(&[e(0), e(1), e(2)]).unwrap();
        for (i, &x) in f.as_slice().iter().enumerate() {
            let expected = if i < 3 { 1.0 / 3.0 } else { 0.0 };
            assert!((x - expected).abs() < 1e-15);
        }
        assert!(fuse(&[e(0), ClassScores(vec![1.0; 6])]).is_err());
        assert!(fuse(&[]).is_err());
    }

    #[test]
    fn fuse_va_examples() {
        let p = |v, a| VASignPrediction::new(v, a).unwrap();
        let f = fuse_va(&[p(0.2, 0.4), p(0.4, 0.6), p(0.6, 0.8)]).unwrap();
        assert!((f.p_valence_pos - 0.4).abs() < 1e-12);
        assert!((f.p_arousal_pos - 0.6).abs() < 1e-12);
        let same = fuse_va(&[p(0.3, 0.9); 3]).unwrap();
        assert!((same.p_valence_pos - 0.3).abs() < 1e-15);
        assert!((same.p_arousal_pos - 0.9).abs() < 1e-15);
    }
}
