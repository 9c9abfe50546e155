use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{AttentionMask, KeyScale, Weighting};
use super::ffn::{Ffn, FfnCache};
use super::layer_norm::{LayerNorm, LayerNormCache};
use super::multi_head::{MultiHead, MultiHeadCache};
use super::tensor::{join, Parameters, Tensor};
use crate::error::Result;

/// Inverted dropout. With `p == 0` it is the identity and draws nothing.
#[derive(Clone, Debug)]
pub struct Dropout {
    p: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn new(p: f64, seed: u64) -> Self {
        if p <= 0.0 {
            return Dropout::off();
        }
        Dropout {
            p,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn apply(&mut self, x: Tensor) -> (Tensor, Option<Vec<f64>>) {
        let Some(rng) = self.rng.as_mut() else {
            return (x, None);
        };
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut y = x;
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        (y, Some(mask))
    }
}

fn undrop(dy: &Tensor, mask: &Option<Vec<f64>>) -> Tensor {
    let mut d = dy.clone();
    if let Some(m) = mask {
        for (v, k) in d.data_mut().iter_mut().zip(m) {
            *v *= k;
        }
    }
    d
}

/// Where a block's attention reads its keys and values from.
#[derive(Clone, Copy, Debug)]
pub enum Memory<'a> {
    /// Self-attention over the (normalized) queries.
    SelfAttend,
    /// External memory passed through the block's attention norm.
    Normalized(&'a Tensor),
    /// External memory used as is.
    Raw(&'a Tensor),
}

/// Attention sublayer followed by a feed-forward sublayer.
///
/// With `residual` set each sublayer is pre-norm with a skip connection:
/// `h = x + attn(ln(x), mem)`, `y = h + ffn(ln(h))`. Without it the block is
/// the bare composition `y = ffn(attn(x, mem))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln_attn: LayerNorm,
    pub attn: MultiHead,
    pub ln_ffn: LayerNorm,
    pub ffn: Ffn,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    residual: bool,
    self_attend: bool,
    ln_q: Option<LayerNormCache>,
    ln_mem: Option<LayerNormCache>,
    attn: MultiHeadCache,
    drop_attn: Option<Vec<f64>>,
    ln_h: Option<LayerNormCache>,
    ffn: FfnCache,
    drop_ffn: Option<Vec<f64>>,
    /// Input of the FFN sublayer: `h` after the attention residual.
    pub attended: Tensor,
}

impl BlockCache {
    pub fn attention(&self) -> &MultiHeadCache {
        &self.attn
    }
}

/// Per-call switches shared by every block of a stack.
#[derive(Clone, Copy, Debug)]
pub struct BlockOptions<'a> {
    pub residual: bool,
    pub scale: KeyScale<'a>,
    pub weighting: Weighting,
}

impl Block {
    pub fn new<R: Rng>(d_model: usize, heads: usize, d_ff: usize, rng: &mut R) -> Result<Self> {
        Ok(Block {
            ln_attn: LayerNorm::new(d_model),
            attn: MultiHead::new(d_model, heads, rng)?,
            ln_ffn: LayerNorm::new(d_model),
            ffn: Ffn::new(d_model, d_ff, rng),
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        memory: Memory<'_>,
        mask: &AttentionMask,
        opts: BlockOptions<'_>,
        drop: &mut Dropout,
    ) -> Result<(Tensor, BlockCache)> {
        let (qn, ln_q) = if opts.residual {
            let (y, c) = self.ln_attn.forward(x);
            (y, Some(c))
        } else {
            (x.clone(), None)
        };
        let (mem, ln_mem) = match memory {
            Memory::SelfAttend => (None, None),
            Memory::Normalized(m) if opts.residual => {
                let (y, c) = self.ln_attn.forward(m);
                (Some(y), Some(c))
            }
            Memory::Normalized(m) | Memory::Raw(m) => (Some(m.clone()), None),
        };
        let kv = mem.as_ref().unwrap_or(&qn);
        let (a, attn) = self.attn.forward(&qn, kv, mask, opts.scale, opts.weighting)?;
        let (a, drop_attn) = drop.apply(a);
        let h = if opts.residual { x.add(&a) } else { a };
        let (hn, ln_h) = if opts.residual {
            let (y, c) = self.ln_ffn.forward(&h);
            (y, Some(c))
        } else {
            (h.clone(), None)
        };
        let (f, ffn) = self.ffn.forward(&hn)?;
        let (f, drop_ffn) = drop.apply(f);
        let out = if opts.residual { h.add(&f) } else { f };
        Ok((
            out,
            BlockCache {
                residual: opts.residual,
                self_attend: matches!(memory, Memory::SelfAttend),
                ln_q,
                ln_mem,
                attn,
                drop_attn,
                ln_h,
                ffn,
                drop_ffn,
                attended: h,
            },
        ))
    }

    /// Returns `(dx, dmemory)`; `dmemory` is `None` for self-attention, whose
    /// memory gradient is already folded into `dx`.
    pub fn backward(&self, c: &BlockCache, dout: &Tensor, grad: &mut Block) -> Result<(Tensor, Option<Tensor>)> {
        let df = undrop(dout, &c.drop_ffn);
        let dhn = self.ffn.backward(&c.ffn, &df, &mut grad.ffn)?;
        let dh = match &c.ln_h {
            Some(lc) => dout.add(&self.ln_ffn.backward(lc, &dhn, &mut grad.ln_ffn)),
            None => dhn,
        };
        let da = undrop(&dh, &c.drop_attn);
        let (mut dqn, dkv) = self.attn.backward(&c.attn, &da, &mut grad.attn)?;
        let dmem = if c.self_attend {
            dqn.add_assign(&dkv);
            None
        } else {
            Some(match &c.ln_mem {
                Some(lc) => self.ln_attn.backward(lc, &dkv, &mut grad.ln_attn),
                None => dkv,
            })
        };
        let dx = match &c.ln_q {
            Some(lc) => dh.add(&self.ln_attn.backward(lc, &dqn, &mut grad.ln_attn)),
            None => dqn,
        };
        debug_assert!(c.residual == c.ln_q.is_some());
        Ok((dx, dmem))
    }
}

impl Parameters for Block {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.ln_attn.visit(&join(prefix, "ln_attn"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln_ffn.visit(&join(prefix, "ln_ffn"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.ln_attn.visit_mut(&join(prefix, "ln_attn"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln_ffn.visit_mut(&join(prefix, "ln_ffn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}
