//! Three-scale temporal pyramid sampling and missing-face fallback.
//!
//! For a target frame `t` of an `N`-frame video the pyramid holds:
//!
//! * `local`: `len` consecutive frames starting at `t` (shifted back at the
//!   end of the video, padded with the last frame for short videos),
//! * `quarter`: `len` frames spread over the quarter of the video containing
//!   `t`,
//! * `global`: `len` frames spread over the whole video.

use crate::error::{Error, Result};

pub const SEQ_LEN: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Local,
    Quarter,
    Global,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Local, Scale::Quarter, Scale::Global];

    pub fn name(self) -> &'static str {
        match self {
            Scale::Local => "local",
            Scale::Quarter => "quarter",
            Scale::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidSample {
    pub target: usize,
    pub local: Vec<usize>,
    pub quarter: Vec<usize>,
    pub global: Vec<usize>,
}

impl PyramidSample {
    pub fn sequence(&self, scale: Scale) -> &[usize] {
        match scale {
            Scale::Local => &self.local,
            Scale::Quarter => &self.quarter,
            Scale::Global => &self.global,
        }
    }

    pub fn sequences(&self) -> [&[usize]; 3] {
        [&self.local, &self.quarter, &self.global]
    }
}

/// `len` indices linearly spaced over `[start, end)`, both endpoints included,
/// rounding half up: `start + round(i * (end - start - 1) / (len - 1))`.
pub fn uniform_sample(start: usize, end: usize, len: usize) -> Result<Vec<usize>> {
    if end <= start {
        return Err(Error::Argument(format!(
            "empty sampling range [{start}, {end})"
        )));
    }
    if len == 0 {
        return Err(Error::Argument("sequence length must be at least 1".into()));
    }
    if len == 1 {
        return Ok(vec![start]);
    }
    let span = end - start - 1;
    let denom = len - 1;
    // floor(x + 1/2) in exact integer arithmetic
    Ok((0..len)
        .map(|i| start + (2 * i * span + denom) / (2 * denom))
        .collect())
}

fn check_frame(t: usize, n: usize) -> Result<()> {
    if t >= n {
        return Err(Error::Argument(format!(
            "frame {t} out of range for {n} frames"
        )));
    }
    Ok(())
}

pub fn local_window(t: usize, n: usize, len: usize) -> Result<Vec<usize>> {
    check_frame(t, n)?;
    if n >= len {
        let start = t.min(n - len);
        Ok((start..start + len).collect())
    } else {
        Ok((0..len).map(|i| i.min(n - 1)).collect())
    }
}

/// The quarter segment `[lo, hi)` containing `t`.
///
/// Quarter `q = min(3, floor(4t / N))`; boundaries are `ceil(kN / 4)` so the
/// four segments partition the video and segment `q` always contains `t`.
pub fn quarter_segment(t: usize, n: usize) -> Result<(usize, usize)> {
    check_frame(t, n)?;
    let q = (4 * t / n).min(3);
    let bound = |k: usize| (k * n).div_ceil(4);
    let lo = bound(q);
    let hi = if q == 3 { n } else { bound(q + 1) };
    Ok((lo, hi))
}

pub fn quarter_window(t: usize, n: usize, len: usize) -> Result<Vec<usize>> {
    let (lo, hi) = quarter_segment(t, n)?;
    uniform_sample(lo, hi, len)
}

pub fn global_window(n: usize, len: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("video has no frames".into()));
    }
    uniform_sample(0, n, len)
}

pub fn pyramid(t: usize, n: usize, len: usize) -> Result<PyramidSample> {
    Ok(PyramidSample {
        target: t,
        local: local_window(t, n, len)?,
        quarter: quarter_window(t, n, len)?,
        global: global_window(n, len)?,
    })
}

/// Nearest detected frame to `t`; equidistant candidates resolve to the
/// earlier frame.
pub fn face_fallback(mask: &[bool], t: usize) -> Result<usize> {
    check_frame(t, mask.len())?;
    if mask[t] {
        return Ok(t);
    }
    for d in 1..mask.len() {
        if t >= d && mask[t - d] {
            return Ok(t - d);
        }
        if t + d < mask.len() && mask[t + d] {
            return Ok(t + d);
        }
    }
    Err(Error::Data("no face detected in any frame".into()))
}

/// Precomputed [`face_fallback`] for every frame of one video.
#[derive(Debug, Clone)]
pub struct FallbackTable {
    resolved: Vec<usize>,
}

impl FallbackTable {
    pub fn new(mask: &[bool]) -> Result<Self> {
        let n = mask.len();
        if !mask.iter().any(|&m| m) {
            return Err(Error::Data("no face detected in any frame".into()));
        }
        let mut prev = vec![None; n];
        let mut last = None;
        for i in 0..n {
            if mask[i] {
                last = Some(i);
            }
            prev[i] = last;
        }
        let mut resolved = vec![0; n];
        let mut next = None;
        for i in (0..n).rev() {
            if mask[i] {
                next = Some(i);
            }
            resolved[i] = match (prev[i], next) {
                (Some(p), Some(q)) => {
                    if i - p <= q - i {
                        p
                    } else {
                        q
                    }
                }
                (Some(p), None) => p,
                (None, Some(q)) => q,
                (None, None) => unreachable!("mask has a detection"),
            };
        }
        Ok(Self { resolved })
    }

    pub fn resolve(&self, t: usize) -> usize {
        self.resolved[t]
    }

    pub fn resolve_all(&self, seq: &[usize]) -> Vec<usize> {
        seq.iter().map(|&i| self.resolved[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(a: usize, b: usize) -> Vec<usize> {
        (a..b).collect()
    }

    // Straight from the formula in floating point, independent of the
    // integer path above.
    fn sample_oracle(start: usize, end: usize, len: usize) -> Vec<usize> {
        if len == 1 {
            return vec![start];
        }
        (0..len)
            .map(|i| {
                let x = i as f64 * (end - start - 1) as f64 / (len - 1) as f64;
                start + (x + 0.5).floor() as usize
            })
            .collect()
    }

    #[test]
    fn uniform_sample_examples() {
        assert_eq!(uniform_sample(0, 15, 15).unwrap(), range(0, 15));
        assert_eq!(
            uniform_sample(0, 60, 15).unwrap(),
            [0, 4, 8, 13, 17, 21, 25, 30, 34, 38, 42, 46, 51, 55, 59]
        );
        let short = uniform_sample(5, 8, 15).unwrap();
        assert_eq!(short, [5, 5, 5, 5, 6, 6, 6, 6, 6, 6, 6, 7, 7, 7, 7]);
        assert_eq!(uniform_sample(3, 4, 15).unwrap(), vec![3; 15]);
        assert_eq!(uniform_sample(3, 9, 1).unwrap(), [3]);
        assert!(uniform_sample(4, 4, 15).is_err());
        assert!(uniform_sample(0, 4, 0).is_err());
    }

    #[test]
    fn uniform_sample_matches_float_oracle() {
        for start in 0..5 {
            for n in 1..120 {
                for len in [1, 2, 3, 7, 15, 16] {
                    assert_eq!(
                        uniform_sample(start, start + n, len).unwrap(),
                        sample_oracle(start, start + n, len),
                        "start={start} n={n} len={len}"
                    );
                }
            }
        }
    }

    #[test]
    fn local_window_examples() {
        assert_eq!(local_window(0, 30, 15).unwrap(), range(0, 15));
        assert_eq!(local_window(25, 30, 15).unwrap(), range(15, 30));
        assert_eq!(
            local_window(2, 5, 15).unwrap(),
            [0, 1, 2, 3, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4]
        );
        assert!(local_window(30, 30, 15).is_err());
    }

    #[test]
    fn quarter_window_examples() {
        assert_eq!(quarter_window(10, 60, 15).unwrap(), range(0, 15));
        assert_eq!(quarter_window(59, 60, 15).unwrap(), range(45, 60));
        assert_eq!(quarter_window(0, 4, 15).unwrap(), vec![0; 15]);
        assert_eq!(quarter_segment(1, 5).unwrap(), (0, 2));
        assert_eq!(quarter_segment(0, 2).unwrap(), (0, 1));
        assert_eq!(quarter_segment(1, 2).unwrap(), (1, 2));
    }

    #[test]
    fn global_window_examples() {
        assert_eq!(global_window(15, 15).unwrap(), range(0, 15));
        assert_eq!(
            global_window(60, 15).unwrap(),
            [0, 4, 8, 13, 17, 21, 25, 30, 34, 38, 42, 46, 51, 55, 59]
        );
        assert_eq!(global_window(1, 15).unwrap(), vec![0; 15]);
        assert!(global_window(0, 15).is_err());
    }

    #[test]
    fn fallback_examples() {
        assert_eq!(face_fallback(&[true, true, true], 1).unwrap(), 1);
        assert_eq!(face_fallback(&[true, false, false, true], 1).unwrap(), 0);
        assert_eq!(face_fallback(&[true, false, true], 1).unwrap(), 0);
        assert_eq!(face_fallback(&[false, false, true], 0).unwrap(), 2);
        assert!(matches!(
            face_fallback(&[false, false], 1),
            Err(Error::Data(_))
        ));
        assert!(FallbackTable::new(&[false; 4]).is_err());
    }

    #[test]
    fn fallback_table_matches_scan() {
        // every mask of length <= 10
        for n in 1..=10usize {
            for bits in 1u32..(1 << n) {
                let mask: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
                let table = FallbackTable::new(&mask).unwrap();
                for t in 0..n {
                    assert_eq!(table.resolve(t), face_fallback(&mask, t).unwrap());
                }
            }
        }
    }

    #[test]
    fn shape_invariants_small_sweep() {
        for n in 1..=64 {
            for t in 0..n {
                let p = pyramid(t, n, SEQ_LEN).unwrap();
                for seq in p.sequences() {
                    assert_eq!(seq.len(), SEQ_LEN);
                    assert!(seq.iter().all(|&i| i < n));
                    assert!(seq.windows(2).all(|w| w[0] <= w[1]));
                }
                assert!(p.local.contains(&t));
                let (lo, hi) = quarter_segment(t, n).unwrap();
                assert!(lo <= t && t < hi);
            }
        }
    }
}
