//! Per-video feature files.
//!
//! Format (little-endian, one file per video, named `<clip_id>.tlhn`):
//! - magic: `b"TLHN"`
//! - version: u32 = 1
//! - N: u32 frame count, D: u32 feature width
//! - features: N * D f32, row-major
//! - mask: N bytes, 1 = face detected, 0 = not

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Mat;

pub const FEATURE_MAGIC: &[u8; 4] = b"TLHN";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_EXT: &str = "tlhn";

#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub clip_id: String,
    pub features: Mat<f32>,
    pub mask: Vec<bool>,
}

impl VideoFeatures {
    pub fn new(clip_id: impl Into<String>, features: Mat<f32>, mask: Vec<bool>) -> Result<Self> {
        let clip_id = clip_id.into();
        if features.rows == 0 {
            return Err(Error::Data(format!("clip `{clip_id}` has no frames")));
        }
        if mask.len() != features.rows {
            return Err(Error::Data(format!(
                "clip `{clip_id}`: mask length {} != {} frames",
                mask.len(),
                features.rows
            )));
        }
        if !features.is_finite() {
            return Err(Error::Data(format!(
                "clip `{clip_id}` has non-finite features"
            )));
        }
        Ok(Self {
            clip_id,
            features,
            mask,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.features.rows
    }

    pub fn dim(&self) -> usize {
        self.features.cols
    }

    /// Stack the given frame rows into a sequence matrix.
    pub fn gather(&self, frames: &[usize]) -> Mat<f32> {
        let d = self.dim();
        let mut data = Vec::with_capacity(frames.len() * d);
        for &f in frames {
            data.extend_from_slice(self.features.row(f));
        }
        Mat::from_vec(frames.len(), d, data)
    }
}

pub fn encode_features(v: &VideoFeatures) -> Vec<u8> {
    let (n, d) = (v.num_frames(), v.dim());
    let mut out = Vec::with_capacity(16 + 4 * n * d + n);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for x in &v.features.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend(v.mask.iter().map(|&m| m as u8));
    out
}

pub fn decode_features(clip_id: &str, bytes: &[u8], origin: &Path) -> Result<VideoFeatures> {
    let bad = |m: String| Error::format(origin, m);
    if bytes.len() < 16 {
        return Err(bad("file shorter than header".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("bad magic, expected TLHN".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = word(4) as u32;
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported feature file version {version}")));
    }
    let (n, d) = (word(8), word(12));
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(16 + n))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for N={n} D={d}, found {}",
            bytes.len()
        )));
    }
    let body = &bytes[16..16 + 4 * n * d];
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mask = bytes[16 + 4 * n * d..]
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(bad(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    VideoFeatures::new(clip_id, Mat::from_vec(n, d, data), mask).map_err(|e| bad(e.to_string()))
}

pub fn write_features(dir: &Path, v: &VideoFeatures) -> Result<PathBuf> {
    let path = dir.join(format!("{}.{FEATURE_EXT}", v.clip_id));
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&encode_features(v))
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_features(path: &Path) -> Result<VideoFeatures> {
    let clip_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "file name is not valid UTF-8"))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(clip_id, &bytes, path)
}

pub trait FeatureStore: Sync {
    fn load(&self, clip_id: &str) -> Result<VideoFeatures>;
}

/// Directory of `<clip_id>.tlhn` files.
#[derive(Debug, Clone)]
pub struct DirStore {
    dir: PathBuf,
}

impl DirStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Clip ids of every feature file in the directory, sorted.
    pub fn clip_ids(&self) -> Result<Vec<String>> {
        let entries = std::fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&self.dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some(FEATURE_EXT) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

impl FeatureStore for DirStore {
    fn load(&self, clip_id: &str) -> Result<VideoFeatures> {
        let path = self.dir.join(format!("{clip_id}.{FEATURE_EXT}"));
        if !path.exists() {
            return Err(Error::Data(format!(
                "missing feature file for clip `{clip_id}` ({})",
                path.display()
            )));
        }
        read_features(&path)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    videos: BTreeMap<String, VideoFeatures>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, v: VideoFeatures) {
        self.videos.insert(v.clip_id.clone(), v);
    }

    pub fn videos(&self) -> impl Iterator<Item = &VideoFeatures> {
        self.videos.values()
    }
}

impl FeatureStore for MemoryStore {
    fn load(&self, clip_id: &str) -> Result<VideoFeatures> {
        self.videos
            .get(clip_id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("missing features for clip `{clip_id}`")))
    }
}
