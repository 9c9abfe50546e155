use rand::Rng;

use super::attention::{attention_backward, scaled_dot_attention, AttentionCache, AttentionMask, KeyScale, Weighting};
use super::linear::Linear;
use super::tensor::{join, Parameters, Tensor};
use crate::error::{Error, Result};

/// Multi-head attention: per-head scaled dot-product attention on slices of
/// the projected queries, keys and values, heads concatenated then projected.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHead {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct MultiHeadCache {
    xq: Tensor,
    xkv: Tensor,
    heads: Vec<AttentionCache>,
    concat: Tensor,
}

impl MultiHeadCache {
    /// Attention weights of head `h` (before any post-softmax multiplier).
    pub fn weights(&self, h: usize) -> &Tensor {
        &self.heads[h].weights
    }

    /// Concatenated head outputs before the output projection.
    pub fn context(&self) -> &Tensor {
        &self.concat
    }
}

impl MultiHead {
    pub fn new<R: Rng>(d_model: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model dim {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHead {
            wq: Linear::new(d_model, d_model, rng),
            wk: Linear::new(d_model, d_model, rng),
            wv: Linear::new(d_model, d_model, rng),
            wo: Linear::new(d_model, d_model, rng),
            heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.d_out()
    }

    pub fn forward(
        &self,
        xq: &Tensor,
        xkv: &Tensor,
        mask: &AttentionMask,
        scale: KeyScale<'_>,
        weighting: Weighting,
    ) -> Result<(Tensor, MultiHeadCache)> {
        let d = self.d_model();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::InvalidArgument(format!("model dim {d} is not divisible by {} heads", self.heads)));
        }
        let dh = d / self.heads;
        let q = self.wq.forward(xq)?;
        let k = self.wk.forward(xkv)?;
        let v = self.wv.forward(xkv)?;
        let mut concat = Tensor::zeros(&[q.rows(), d]);
        let mut caches = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (ctx, c) = scaled_dot_attention(
                &q.columns(h * dh, dh),
                &k.columns(h * dh, dh),
                &v.columns(h * dh, dh),
                mask,
                scale,
                weighting,
            )?;
            concat.set_columns(h * dh, &ctx);
            caches.push(c);
        }
        let out = self.wo.forward(&concat)?;
        Ok((
            out,
            MultiHeadCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                heads: caches,
                concat,
            },
        ))
    }

    /// Returns `(dxq, dxkv)`.
    pub fn backward(&self, cache: &MultiHeadCache, dout: &Tensor, grad: &mut MultiHead) -> Result<(Tensor, Tensor)> {
        let d = self.d_model();
        let dh = d / self.heads;
        let dconcat = self.wo.backward(&cache.concat, dout, &mut grad.wo)?;
        let nq = cache.xq.rows();
        let nk = cache.xkv.rows();
        let mut dq = Tensor::zeros(&[nq, d]);
        let mut dk = Tensor::zeros(&[nk, d]);
        let mut dv = Tensor::zeros(&[nk, d]);
        for (h, c) in cache.heads.iter().enumerate() {
            let (dqh, dkh, dvh) = attention_backward(c, &dconcat.columns(h * dh, dh))?;
            dq.set_columns(h * dh, &dqh);
            dk.set_columns(h * dh, &dkh);
            dv.set_columns(h * dh, &dvh);
        }
        let dxq = self.wq.backward(&cache.xq, &dq, &mut grad.wq)?;
        let mut dxkv = self.wk.backward(&cache.xkv, &dk, &mut grad.wk)?;
        dxkv.add_assign(&self.wv.backward(&cache.xkv, &dv, &mut grad.wv)?);
        Ok((dxq, dxkv))
    }
}

impl Parameters for MultiHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.wq.visit_mut(&join(prefix, "wq"), f);
        self.wk.visit_mut(&join(prefix, "wk"), f);
        self.wv.visit_mut(&join(prefix, "wv"), f);
        self.wo.visit_mut(&join(prefix, "wo"), f);
    }
}
