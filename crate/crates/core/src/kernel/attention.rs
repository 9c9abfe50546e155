//! Masked softmax and scaled dot-product attention with an optional per-key
//! multiplier applied after the softmax.
//!
//! The per-key multiplier carries the memory-decay factors of the session
//! encoder. Applied post-softmax the weights are deliberately left
//! unnormalized, so the output shrinks as every key decays. The
//! [`KeyScale::Renormalized`] variant instead adds `ln s` to the scores,
//! which equals scaling and renormalizing.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Which keys each query row may attend to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Row `i` sees columns `0..=i`.
    pub fn causal(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| j <= i)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        AttentionMask { rows, cols, allowed }
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Row-wise softmax over allowed entries; masked entries are exactly zero.
pub fn masked_softmax(scores: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
    let (n, m) = (scores.rows(), scores.cols());
    if mask.shape() != (n, m) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match scores [{n}, {m}]",
            mask.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let s = scores.row(i);
        let max = (0..m)
            .filter(|&j| mask.allowed(i, j))
            .map(|j| s[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMaskedRow(i));
        }
        let o = out.row_mut(i);
        let mut sum = 0.0;
        for j in 0..m {
            if mask.allowed(i, j) {
                o[j] = (s[j] - max).exp();
                sum += o[j];
            }
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Backward of [`masked_softmax`] given its output `weights`.
pub fn masked_softmax_backward(weights: &Tensor, dweights: &Tensor) -> Tensor {
    let (n, m) = (weights.rows(), weights.cols());
    let mut ds = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let w = weights.row(i);
        let dw = dweights.row(i);
        let inner: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
        for (j, o) in ds.row_mut(i).iter_mut().enumerate() {
            *o = w[j] * (dw[j] - inner);
        }
    }
    ds
}

/// How attention weights are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Softmax,
    /// Equal weight on every allowed key (average pooling); queries and keys
    /// receive no gradient.
    Uniform,
}

/// Optional per-key multiplier in `(0, 1]`.
#[derive(Clone, Copy, Debug)]
pub enum KeyScale<'a> {
    None,
    PostSoftmax(&'a [f64]),
    Renormalized(&'a [f64]),
}

impl KeyScale<'_> {
    fn check(&self, nk: usize) -> Result<()> {
        if let KeyScale::PostSoftmax(s) | KeyScale::Renormalized(s) = self {
            if s.len() != nk {
                return Err(Error::Shape(format!("{} key scales for {nk} keys", s.len())));
            }
            if let Some(bad) = s.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
                return Err(Error::InvalidArgument(format!("key scale {bad} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Softmax (or uniform) weights before any post-softmax multiplier.
    pub weights: Tensor,
    /// Weights times the post-softmax multiplier.
    effective: Tensor,
    post_scale: Option<Vec<f64>>,
    weighting: Weighting,
    inv_sqrt: f64,
}

/// `ctx_i = sum_j softmax_j(q_i . k_j / sqrt(d_k)) * s_j * v_j`.
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: &AttentionMask,
    scale: KeyScale<'_>,
    weighting: Weighting,
) -> Result<(Tensor, AttentionCache)> {
    let (nq, nk) = (q.rows(), k.rows());
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "attention q {:?} k {:?} v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if mask.shape() != (nq, nk) {
        return Err(Error::Shape(format!("mask {:?} for [{nq}, {nk}] scores", mask.shape())));
    }
    scale.check(nk)?;
    let inv_sqrt = 1.0 / (q.cols() as f64).sqrt();
    let weights = match weighting {
        Weighting::Softmax => {
            let mut scores = q.matmul_nt(k)?;
            for x in scores.data_mut() {
                *x *= inv_sqrt;
            }
            if let KeyScale::Renormalized(s) = scale {
                for i in 0..nq {
                    for (x, sj) in scores.row_mut(i).iter_mut().zip(s) {
                        *x += sj.ln();
                    }
                }
            }
            masked_softmax(&scores, mask)?
        }
        Weighting::Uniform => {
            let mut w = Tensor::zeros(&[nq, nk]);
            for i in 0..nq {
                let count = (0..nk).filter(|&j| mask.allowed(i, j)).count();
                if count == 0 {
                    return Err(Error::FullyMaskedRow(i));
                }
                for j in 0..nk {
                    if mask.allowed(i, j) {
                        w.row_mut(i)[j] = 1.0 / count as f64;
                    }
                }
            }
            w
        }
    };
    let post_scale = match scale {
        KeyScale::PostSoftmax(s) => Some(s.to_vec()),
        _ => None,
    };
    let mut effective = weights.clone();
    if let Some(s) = &post_scale {
        for i in 0..nq {
            for (x, sj) in effective.row_mut(i).iter_mut().zip(s) {
                *x *= sj;
            }
        }
    }
    let ctx = effective.matmul(v)?;
    debug_assert!(ctx.all_finite(), "attention produced non-finite output");
    Ok((
        ctx,
        AttentionCache {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            weights,
            effective,
            post_scale,
            weighting,
            inv_sqrt,
        },
    ))
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward(cache: &AttentionCache, dctx: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dv = cache.effective.matmul_tn(dctx)?;
    let mut dw = dctx.matmul_nt(&cache.v)?;
    if let Some(s) = &cache.post_scale {
        for i in 0..dw.rows() {
            for (x, sj) in dw.row_mut(i).iter_mut().zip(s) {
                *x *= sj;
            }
        }
    }
    match cache.weighting {
        Weighting::Uniform => Ok((
            Tensor::zeros(cache.q.shape()),
            Tensor::zeros(cache.k.shape()),
            dv,
        )),
        Weighting::Softmax => {
            let mut ds = masked_softmax_backward(&cache.weights, &dw);
            for x in ds.data_mut() {
                *x *= cache.inv_sqrt;
            }
            let dq = ds.matmul(&cache.k)?;
            let dk = ds.matmul_tn(&cache.q)?;
            Ok((dq, dk, dv))
        }
    }
}
