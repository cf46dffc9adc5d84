use super::encoder::ForwardOutput;
use super::tensor::Scalar;
use crate::error::{Error, Result};
use crate::label_space::VaSigns;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Target {
    pub class: Option<usize>,
    pub va: Option<VaSigns>,
}

impl Target {
    pub fn class(index: usize) -> Self {
        Self {
            class: Some(index),
            va: None,
        }
    }

    pub fn va(signs: VaSigns) -> Self {
        Self {
            class: None,
            va: Some(signs),
        }
    }

    pub fn both(index: usize, signs: VaSigns) -> Self {
        Self {
            class: Some(index),
            va: Some(signs),
        }
    }

    /// The richest mode this target supports.
    pub fn mode(&self) -> Option<LossMode> {
        match (self.class, self.va) {
            (Some(_), Some(_)) => Some(LossMode::Both),
            (Some(_), None) => Some(LossMode::Class),
            (None, Some(_)) => Some(LossMode::Va),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Class,
    Va,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub class: f64,
    pub va: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 1.0,
            va: 1.0,
        }
    }
}

/// Loss value and its gradients at the class and VA logits.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: T,
    pub d_class: Vec<T>,
    pub d_va: Vec<T>,
}

/// Unweighted loss: softmax cross-entropy, the sum of two sigmoid binary
/// cross-entropies, or both summed.
pub fn loss<T: Scalar>(out: &ForwardOutput<T>, target: &Target, mode: LossMode) -> Result<T> {
    Ok(loss_grad(out, target, mode, LossWeights::default())?.loss)
}

pub fn loss_grad<T: Scalar>(
    out: &ForwardOutput<T>,
    target: &Target,
    mode: LossMode,
    weights: LossWeights,
) -> Result<LossGrad<T>> {
    let mut total = T::zero();
    let mut d_class = vec![T::zero(); out.class_logits.len()];
    let mut d_va = vec![T::zero(); out.va_logits.len()];

    if matches!(mode, LossMode::Class | LossMode::Both) {
        let y = target
            .class
            .ok_or_else(|| Error::Argument("class loss requested without a class target".into()))?;
        if y >= out.class_logits.len() {
            return Err(Error::Argument(format!(
                "class index {y} out of range for {} classes",
                out.class_logits.len()
            )));
        }
        let w = T::of(weights.class);
        let z = &out.class_logits;
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total = total + w * (lse - z[y]);
        for (i, d) in d_class.iter_mut().enumerate() {
            let p = (z[i] - lse).exp();
            let onehot = if i == y { T::one() } else { T::zero() };
            *d = w * (p - onehot);
        }
    }

    if matches!(mode, LossMode::Va | LossMode::Both) {
        let signs = target
            .va
            .ok_or_else(|| Error::Argument("VA loss requested without VA targets".into()))?;
        let w = T::of(weights.va);
        for (i, sign) in [signs.valence, signs.arousal].into_iter().enumerate() {
            let z = out.va_logits[i];
            let y = if sign.is_positive() {
                T::one()
            } else {
                T::zero()
            };
            // max(z, 0) - z·y + ln(1 + e^{-|z|})
            let bce = z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
            total = total + w * bce;
            d_va[i] = w * (sigmoid(z) - y);
        }
    }

    Ok(LossGrad {
        loss: total,
        d_class,
        d_va,
    })
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
