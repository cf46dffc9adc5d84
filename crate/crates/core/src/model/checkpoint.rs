//! Checkpoint file, little-endian:
//!
//! ```text
//! b"TLHC" | u32 version = 1 | u32 hidden | u32 layers | u32 heads | u32 input_dim
//! for each tensor in `ModelParams::named_tensors` order:
//!     u32 rank | u32 dims[rank] | f32 data (row-major)
//! ```
//!
//! Biases and layer-norm vectors are rank 1, everything else rank 2. The
//! sequence length is recovered from the position table's row count.

use std::io::{Read, Write};
use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use super::tensor::{Mat, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TLHC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn is_vector(name: &str) -> bool {
    name.ends_with("bias")
        || name.ends_with("gain")
        || name.ends_with(".b1")
        || name.ends_with(".b2")
}

pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let cfg = params.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        cfg.hidden as u32,
        cfg.layers as u32,
        cfg.heads as u32,
        cfg.input_dim as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (name, t) in params.named_tensors() {
        if is_vector(&name) {
            out.extend_from_slice(&1u32.to_le_bytes());
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        }
        for x in &t.data {
            out.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<ModelParams<T>> {
    let bad = |m: String| Error::format(origin, m);
    let truncated = || bad("truncated checkpoint".into());
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("bad magic, expected TLHC".into()));
    }
    let version = cur.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut hyper = [0usize; 4];
    for h in &mut hyper {
        *h = cur.u32().ok_or_else(truncated)? as usize;
    }
    let [hidden, layers, heads, input_dim] = hyper;

    // the position table is the third tensor; peek its row count
    let mut config = ModelConfig {
        input_dim,
        hidden,
        layers,
        heads,
        seq_len: 1,
    };
    let saved_pos = cur.pos;
    for _ in 0..2 {
        skip_tensor(&mut cur).ok_or_else(truncated)?;
    }
    let rank = cur.u32().ok_or_else(truncated)?;
    if rank != 2 {
        return Err(bad("position table must be rank 2".into()));
    }
    config.seq_len = cur.u32().ok_or_else(truncated)? as usize;
    cur.pos = saved_pos;

    let mut params = ModelParams::<T>::zeros(config).map_err(|e| bad(e.to_string()))?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        let rank = cur.u32().ok_or_else(truncated)? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let expected = if is_vector(name) {
            vec![t.len()]
        } else {
            vec![t.rows, t.cols]
        };
        if dims != expected {
            return Err(bad(format!(
                "tensor {name}: shape {dims:?}, expected {expected:?}"
            )));
        }
        let raw = cur.take(4 * t.len()).ok_or_else(truncated)?;
        for (x, b) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *x = T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64);
        }
    }
    if cur.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    if !params.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite parameter in {}",
            origin.display()
        )));
    }
    Ok(params)
}

fn skip_tensor(cur: &mut Cursor<'_>) -> Option<()> {
    let rank = cur.u32()? as usize;
    let mut n = 1usize;
    for _ in 0..rank {
        n = n.checked_mul(cur.u32()? as usize)?;
    }
    cur.take(n.checked_mul(4)?)?;
    Some(())
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Round a parameter set through `f32`, as a checkpoint would.
pub fn quantize<T: Scalar>(params: &ModelParams<T>) -> ModelParams<T> {
    let mut out = params.clone();
    for t in out.tensors_mut() {
        quantize_mat(t);
    }
    out
}

fn quantize_mat<T: Scalar>(m: &mut Mat<T>) {
    for x in &mut m.data {
        *x = T::of(x.to_f32().unwrap() as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelParams<f32> {
        let mut cfg = ModelConfig::new(5);
        cfg.hidden = 8;
        cfg.heads = 2;
        cfg.layers = 2;
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn round_trip_is_exact_for_f32() {
        let p = small();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"TLHC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        let back: ModelParams<f32> = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = small();
        let mut bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        bytes.push(0);
        assert!(decode_checkpoint::<f32>(&bytes, Path::new("m")).is_err());
        let mut bytes = encode_checkpoint(&p);
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes, Path::new("m")),
            Err(Error::Format { .. })
        ));
    }
}
