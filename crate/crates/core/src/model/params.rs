use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Mat, Scalar};
use crate::error::{Error, Result};
use crate::label_space::NUM_COMPOUND;
use crate::pyramid::SEQ_LEN;

pub const VA_OUTPUTS: usize = 2;
pub const FFN_MULT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            layers: 1,
            heads: 4,
            seq_len: SEQ_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.heads == 0 || self.seq_len == 0 {
            return Err(Error::Config(format!("degenerate model shape {self:?}")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: Mat<T>,
    pub ln1_bias: Mat<T>,
    pub wq: Mat<T>,
    pub wk: Mat<T>,
    pub wv: Mat<T>,
    pub wo: Mat<T>,
    pub ln2_gain: Mat<T>,
    pub ln2_bias: Mat<T>,
    pub ff1_w: Mat<T>,
    pub ff1_b: Mat<T>,
    pub ff2_w: Mat<T>,
    pub ff2_b: Mat<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(h: usize) -> Self {
        Self {
            ln1_gain: Mat::zeros(1, h),
            ln1_bias: Mat::zeros(1, h),
            wq: Mat::zeros(h, h),
            wk: Mat::zeros(h, h),
            wv: Mat::zeros(h, h),
            wo: Mat::zeros(h, h),
            ln2_gain: Mat::zeros(1, h),
            ln2_bias: Mat::zeros(1, h),
            ff1_w: Mat::zeros(h, FFN_MULT * h),
            ff1_b: Mat::zeros(1, FFN_MULT * h),
            ff2_w: Mat::zeros(FFN_MULT * h, h),
            ff2_b: Mat::zeros(1, h),
        }
    }

    fn tensors(&self) -> [&Mat<T>; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ff1_w,
            &self.ff1_b,
            &self.ff2_w,
            &self.ff2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Mat<T>; 12] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
        ]
    }
}

const LAYER_TENSOR_NAMES: [&str; 12] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.gain", "ln2.bias",
    "ff.w1", "ff.b1", "ff.w2", "ff.b2",
];

/// All tensors of the embedding, encoder stack and both heads.
///
/// The same struct holds gradients; there `posenc` stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub embed_w: Mat<T>,
    pub embed_b: Mat<T>,
    pub posenc: Mat<T>,
    pub layers: Vec<LayerParams<T>>,
    pub class_w: Mat<T>,
    pub class_b: Mat<T>,
    pub va_w: Mat<T>,
    pub va_b: Mat<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        Ok(Self {
            config,
            embed_w: Mat::zeros(config.input_dim, h),
            embed_b: Mat::zeros(1, h),
            posenc: Mat::zeros(config.seq_len, h),
            layers: (0..config.layers).map(|_| LayerParams::zeros(h)).collect(),
            class_w: Mat::zeros(h, NUM_COMPOUND),
            class_b: Mat::zeros(1, NUM_COMPOUND),
            va_w: Mat::zeros(h, VA_OUTPUTS),
            va_b: Mat::zeros(1, VA_OUTPUTS),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    /// Fresh parameters: scaled-normal weights, zero biases, unit layer-norm
    /// gains and the sinusoidal position table.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        p.posenc = sinusoidal_table(config.seq_len, config.hidden);
        let depth_scale = 1.0 / (2.0 * config.layers.max(1) as f64).sqrt();
        fill_normal(&mut p.embed_w, (1.0 / config.input_dim as f64).sqrt(), rng);
        for layer in &mut p.layers {
            let h = config.hidden as f64;
            layer.ln1_gain.fill(T::one());
            layer.ln2_gain.fill(T::one());
            for w in [&mut layer.wq, &mut layer.wk, &mut layer.wv] {
                fill_normal(w, (1.0 / h).sqrt(), rng);
            }
            fill_normal(&mut layer.wo, depth_scale * (1.0 / h).sqrt(), rng);
            fill_normal(&mut layer.ff1_w, (2.0 / h).sqrt(), rng);
            fill_normal(
                &mut layer.ff2_w,
                depth_scale * (1.0 / (FFN_MULT as f64 * h)).sqrt(),
                rng,
            );
        }
        let head_std = (1.0 / config.hidden as f64).sqrt();
        fill_normal(&mut p.class_w, head_std, rng);
        fill_normal(&mut p.va_w, head_std, rng);
        Ok(p)
    }

    /// Zero the position table, making the encoder permutation-equivariant.
    pub fn disable_positional(&mut self) {
        self.posenc.fill(T::zero());
    }

    /// Every tensor in checkpoint order, with its name.
    pub fn named_tensors(&self) -> Vec<(String, &Mat<T>)> {
        let mut out = vec![
            ("embed.weight".to_string(), &self.embed_w),
            ("embed.bias".to_string(), &self.embed_b),
            ("posenc".to_string(), &self.posenc),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSOR_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("class.weight".to_string(), &self.class_w));
        out.push(("class.bias".to_string(), &self.class_b));
        out.push(("va.weight".to_string(), &self.va_w));
        out.push(("va.bias".to_string(), &self.va_b));
        out
    }

    /// Every tensor in checkpoint order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut out = vec![&mut self.embed_w, &mut self.embed_b, &mut self.posenc];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([
            &mut self.class_w,
            &mut self.class_b,
            &mut self.va_w,
            &mut self.va_b,
        ]);
        out
    }

    /// Learnable tensors only (everything but the position table).
    pub fn trainable(&self) -> Vec<(String, &Mat<T>)> {
        self.named_tensors()
            .into_iter()
            .filter(|(name, _)| name != "posenc")
            .collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut all = self.tensors_mut();
        all.remove(2);
        all
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            embed_w: self.embed_w.cast(),
            embed_b: self.embed_b.cast(),
            posenc: self.posenc.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gain: l.ln1_gain.cast(),
                    ln1_bias: l.ln1_bias.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    ln2_gain: l.ln2_gain.cast(),
                    ln2_bias: l.ln2_bias.cast(),
                    ff1_w: l.ff1_w.cast(),
                    ff1_b: l.ff1_b.cast(),
                    ff2_w: l.ff2_w.cast(),
                    ff2_b: l.ff2_b.cast(),
                })
                .collect(),
            class_w: self.class_w.cast(),
            class_b: self.class_b.cast(),
            va_w: self.va_w.cast(),
            va_b: self.va_b.cast(),
        }
    }

    /// `self += scale * other` over all learnable tensors.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        let src: Vec<&Mat<T>> = other.trainable().into_iter().map(|(_, t)| t).collect();
        for (dst, src) in self.trainable_mut().into_iter().zip(src) {
            for (d, &s) in dst.data.iter_mut().zip(&src.data) {
                *d = *d + scale * s;
            }
        }
    }

    pub fn squared_norm(&self) -> T {
        self.trainable()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|&x| x * x)
            .sum()
    }
}

fn fill_normal<T: Scalar, R: Rng + ?Sized>(m: &mut Mat<T>, std: f64, rng: &mut R) {
    let dist = Normal::new(0.0, std).expect("finite std");
    for x in &mut m.data {
        *x = T::of(dist.sample(rng));
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/H))`, `PE[p, 2i+1] = cos(p / 10000^(2i/H))`.
pub fn sinusoidal_table<T: Scalar>(len: usize, width: usize) -> Mat<T> {
    Mat::from_fn(len, width, |p, j| {
        let pair = (j / 2 * 2) as f64;
        let angle = p as f64 / 10000f64.powf(pair / width as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_count_must_divide_width() {
        let mut cfg = ModelConfig::new(4);
        cfg.hidden = 10;
        cfg.heads = 4;
        assert!(matches!(
            ModelParams::<f32>::zeros(cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tensor_order_and_shapes() {
        let mut cfg = ModelConfig::new(4);
        cfg.hidden = 8;
        cfg.heads = 2;
        cfg.layers = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::<f32>::init(cfg, &mut rng).unwrap();
        let named = p.named_tensors();
        assert_eq!(named.len(), 3 + 2 * 12 + 4);
        assert_eq!(named[0].0, "embed.weight");
        assert_eq!((named[0].1.rows, named[0].1.cols), (4, 8));
        assert_eq!(named[2].0, "posenc");
        assert_eq!(named[3 + 8].0, "layer0.ff.w1");
        assert_eq!((named[3 + 8].1.rows, named[3 + 8].1.cols), (8, 32));
        assert_eq!(named.last().unwrap().0, "va.bias");
        assert_eq!(p.trainable().len(), named.len() - 1);
        assert!(p.is_finite());
    }

    #[test]
    fn sinusoid_first_rows() {
        let pe: Mat<f64> = sinusoidal_table(15, 4);
        assert_eq!(pe.row(0), [0.0, 1.0, 0.0, 1.0]);
        assert!((pe.at(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(1, 3) - (1.0 / 100.0f64).cos()).abs() < 1e-15);
    }
}
