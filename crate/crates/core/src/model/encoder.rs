//! Forward and backward passes of the sequence classifier.
//!
//! ```text
//! x (L×D) → x·We + be + PE → [ z + MHA(LN₁ z) → z + FFN(LN₂ z) ] × layers
//!         → mean over L → { class head (7), VA head (2) }
//! ```
//!
//! The feed-forward block uses the tanh GELU so the whole network is smooth,
//! which keeps finite-difference checks tight.

use super::params::{LayerParams, ModelParams};
use super::tensor::{Mat, Scalar};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Mat<T>,
    pub rstd: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    pub ln1: LayerNormCache<T>,
    pub a: Mat<T>,
    pub q: Mat<T>,
    pub k: Mat<T>,
    pub v: Mat<T>,
    /// Row-stochastic attention weights, one `L×L` matrix per head.
    pub attn: Vec<Mat<T>>,
    pub o: Mat<T>,
    pub ln2: LayerNormCache<T>,
    pub b: Mat<T>,
    pub u: Mat<T>,
    pub g: Mat<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub input: Mat<T>,
    pub layers: Vec<LayerCache<T>>,
    pub pooled: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub class_logits: Vec<T>,
    pub va_logits: Vec<T>,
    pub cache: ForwardCache<T>,
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, seq: &Mat<T>) -> Result<ForwardOutput<T>> {
    let cfg = params.config;
    if seq.rows != cfg.seq_len || seq.cols != cfg.input_dim {
        return Err(Error::Argument(format!(
            "sequence must be {}x{}, got {}x{}",
            cfg.seq_len, cfg.input_dim, seq.rows, seq.cols
        )));
    }
    if !seq.is_finite() {
        return Err(Error::Numeric("non-finite value in input sequence".into()));
    }

    let mut z = seq.matmul(&params.embed_w);
    z.add_row_vector(&params.embed_b.data);
    z.add_assign(&params.posenc);

    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = layer_forward(layer, &z, cfg.heads);
        z = next;
        layers.push(cache);
    }

    let pooled = z.column_means();
    let class_logits = linear_vec(&pooled, &params.class_w, &params.class_b.data);
    let va_logits = linear_vec(&pooled, &params.va_w, &params.va_b.data);
    Ok(ForwardOutput {
        class_logits,
        va_logits,
        cache: ForwardCache {
            input: seq.clone(),
            layers,
            pooled,
        },
    })
}

/// Gradients of the loss with respect to every parameter, given the loss
/// gradients at the two heads' logits.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    d_class: &[T],
    d_va: &[T],
) -> ModelParams<T> {
    let mut grads = params.zeros_like();
    let h = params.config.hidden;
    let l = params.config.seq_len;

    outer_into(&mut grads.class_w, &cache.pooled, d_class);
    grads.class_b.data.copy_from_slice(d_class);
    outer_into(&mut grads.va_w, &cache.pooled, d_va);
    grads.va_b.data.copy_from_slice(d_va);

    let mut d_pooled = vec![T::zero(); h];
    for (i, dp) in d_pooled.iter_mut().enumerate() {
        let c: T = params
            .class_w
            .row(i)
            .iter()
            .zip(d_class)
            .map(|(&w, &d)| w * d)
            .sum();
        let v: T = params
            .va_w
            .row(i)
            .iter()
            .zip(d_va)
            .map(|(&w, &d)| w * d)
            .sum();
        *dp = c + v;
    }
    let inv_len = T::one() / T::from_usize(l).unwrap();
    let mut dz = Mat::from_fn(l, h, |_, c| d_pooled[c] * inv_len);

    for ((layer, lc), lg) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        dz = layer_backward(layer, lc, lg, &dz, params.config.heads);
    }

    grads.embed_w = cache.input.t_matmul(&dz);
    grads.embed_b.data = dz.column_sums();
    grads
}

fn linear_vec<T: Scalar>(x: &[T], w: &Mat<T>, b: &[T]) -> Vec<T> {
    (0..w.cols)
        .map(|j| {
            b[j] + x
                .iter()
                .enumerate()
                .map(|(i, &xi)| xi * w.at(i, j))
                .sum::<T>()
        })
        .collect()
}

fn outer_into<T: Scalar>(out: &mut Mat<T>, x: &[T], d: &[T]) {
    for (i, &xi) in x.iter().enumerate() {
        for (o, &dj) in out.row_mut(i).iter_mut().zip(d) {
            *o = xi * dj;
        }
    }
}

fn layer_norm<T: Scalar>(x: &Mat<T>, gain: &[T], bias: &[T]) -> (Mat<T>, LayerNormCache<T>) {
    let n = T::from_usize(x.cols).unwrap();
    let eps = T::of(LN_EPS);
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut y = Mat::zeros(x.rows, x.cols);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for c in 0..x.cols {
            let xh = (row[c] - mean) * rs;
            *xhat.at_mut(r, c) = xh;
            *y.at_mut(r, c) = xh * gain[c] + bias[c];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `d_gain` and `d_bias`.
fn layer_norm_backward<T: Scalar>(
    dy: &Mat<T>,
    gain: &[T],
    cache: &LayerNormCache<T>,
    d_gain: &mut [T],
    d_bias: &mut [T],
) -> Mat<T> {
    let n = T::from_usize(dy.cols).unwrap();
    let mut dx = Mat::zeros(dy.rows, dy.cols);
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for c in 0..dy.cols {
            d_gain[c] = d_gain[c] + dyr[c] * xh[c];
            d_bias[c] = d_bias[c] + dyr[c];
            let dxh = dyr[c] * gain[c];
            mean_dxh = mean_dxh + dxh;
            mean_dxh_xh = mean_dxh_xh + dxh * xh[c];
        }
        mean_dxh = mean_dxh / n;
        mean_dxh_xh = mean_dxh_xh / n;
        let rs = cache.rstd[r];
        for c in 0..dy.cols {
            let dxh = dyr[c] * gain[c];
            *dx.at_mut(r, c) = rs * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    dx
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// Row-wise softmax in place.
fn softmax_rows<T: Scalar>(m: &mut Mat<T>) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total = total + *x;
        }
        for x in row.iter_mut() {
            *x = *x / total;
        }
    }
}

fn layer_forward<T: Scalar>(
    p: &LayerParams<T>,
    z: &Mat<T>,
    heads: usize,
) -> (Mat<T>, LayerCache<T>) {
    let hidden = z.cols;
    let dh = hidden / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

    let (a, ln1) = layer_norm(z, &p.ln1_gain.data, &p.ln1_bias.data);
    let q = a.matmul(&p.wq);
    let k = a.matmul(&p.wk);
    let v = a.matmul(&p.wv);
    let mut o = Mat::zeros(z.rows, hidden);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.columns(h * dh, dh),
            k.columns(h * dh, dh),
            v.columns(h * dh, dh),
        );
        let mut s = qh.matmul_t(&kh);
        s.scale(scale);
        softmax_rows(&mut s);
        o.set_columns(h * dh, &s.matmul(&vh));
        attn.push(s);
    }
    let mut z1 = o.matmul(&p.wo);
    z1.add_assign(z);

    let (b, ln2) = layer_norm(&z1, &p.ln2_gain.data, &p.ln2_bias.data);
    let mut u = b.matmul(&p.ff1_w);
    u.add_row_vector(&p.ff1_b.data);
    let g = Mat {
        rows: u.rows,
        cols: u.cols,
        data: u.data.iter().map(|&x| gelu(x)).collect(),
    };
    let mut out = g.matmul(&p.ff2_w);
    out.add_row_vector(&p.ff2_b.data);
    out.add_assign(&z1);

    (
        out,
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            attn,
            o,
            ln2,
            b,
            u,
            g,
        },
    )
}

/// Returns the gradient at the layer input; writes parameter gradients to `g`.
fn layer_backward<T: Scalar>(
    p: &LayerParams<T>,
    c: &LayerCache<T>,
    g: &mut LayerParams<T>,
    d_out: &Mat<T>,
    heads: usize,
) -> Mat<T> {
    let hidden = d_out.cols;
    let dh = hidden / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();

    // feed-forward branch
    g.ff2_w = c.g.t_matmul(d_out);
    g.ff2_b.data = d_out.column_sums();
    let d_g = d_out.matmul_t(&p.ff2_w);
    let d_u = Mat {
        rows: d_g.rows,
        cols: d_g.cols,
        data: d_g
            .data
            .iter()
            .zip(&c.u.data)
            .map(|(&dg, &u)| dg * gelu_grad(u))
            .collect(),
    };
    g.ff1_w = c.b.t_matmul(&d_u);
    g.ff1_b.data = d_u.column_sums();
    let d_b = d_u.matmul_t(&p.ff1_w);
    let mut d_z1 = layer_norm_backward(
        &d_b,
        &p.ln2_gain.data,
        &c.ln2,
        &mut g.ln2_gain.data,
        &mut g.ln2_bias.data,
    );
    d_z1.add_assign(d_out);

    // attention branch
    g.wo = c.o.t_matmul(&d_z1);
    let d_o = d_z1.matmul_t(&p.wo);
    let mut d_q = Mat::zeros(d_o.rows, hidden);
    let mut d_k = Mat::zeros(d_o.rows, hidden);
    let mut d_v = Mat::zeros(d_o.rows, hidden);
    for h in 0..heads {
        let probs = &c.attn[h];
        let d_oh = d_o.columns(h * dh, dh);
        let qh = c.q.columns(h * dh, dh);
        let kh = c.k.columns(h * dh, dh);
        let vh = c.v.columns(h * dh, dh);
        let d_p = d_oh.matmul_t(&vh);
        d_v.set_columns(h * dh, &probs.t_matmul(&d_oh));
        let mut d_s = Mat::zeros(probs.rows, probs.cols);
        for i in 0..probs.rows {
            let dot: T = probs
                .row(i)
                .iter()
                .zip(d_p.row(i))
                .map(|(&a, &b)| a * b)
                .sum();
            for j in 0..probs.cols {
                *d_s.at_mut(i, j) = probs.at(i, j) * (d_p.at(i, j) - dot) * scale;
            }
        }
        d_q.set_columns(h * dh, &d_s.matmul(&kh));
        d_k.set_columns(h * dh, &d_s.t_matmul(&qh));
    }
    g.wq = c.a.t_matmul(&d_q);
    g.wk = c.a.t_matmul(&d_k);
    g.wv = c.a.t_matmul(&d_v);
    let mut d_a = d_q.matmul_t(&p.wq);
    d_a.add_assign(&d_k.matmul_t(&p.wk));
    d_a.add_assign(&d_v.matmul_t(&p.wv));
    let mut d_z = layer_norm_backward(
        &d_a,
        &p.ln1_gain.data,
        &c.ln1,
        &mut g.ln1_gain.data,
        &mut g.ln1_bias.data,
    );
    d_z.add_assign(&d_z1);
    d_z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Mat::<f64>::from_fn(3, 8, |r, c| (r as f64 + 1.0) * (c as f64).powi(2));
        let (y, _) = layer_norm(&x, &[1.0; 8], &[0.0; 8]);
        for r in 0..3 {
            let mean: f64 = y.row(r).iter().sum::<f64>() / 8.0;
            let var: f64 = y.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
