use rand::Rng;

use super::linear::Linear;
use super::tensor::{join, Parameters, Tensor};
use crate::error::Result;

/// Two-layer perceptron `relu(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ffn {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Clone, Debug)]
pub struct FfnCache {
    x: Tensor,
    hidden: Tensor,
}

impl Ffn {
    pub fn new<R: Rng>(d_model: usize, d_hidden: usize, rng: &mut R) -> Self {
        Ffn {
            l1: Linear::new(d_model, d_hidden, rng),
            l2: Linear::new(d_hidden, d_model, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FfnCache)> {
        let mut hidden = self.l1.forward(x)?;
        hidden.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let y = self.l2.forward(&hidden)?;
        Ok((y, FfnCache { x: x.clone(), hidden }))
    }

    pub fn backward(&self, cache: &FfnCache, dy: &Tensor, grad: &mut Ffn) -> Result<Tensor> {
        let mut dh = self.l2.backward(&cache.hidden, dy, &mut grad.l2)?;
        for (g, h) in dh.data_mut().iter_mut().zip(cache.hidden.data()) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        self.l1.backward(&cache.x, &dh, &mut grad.l1)
    }
}

impl Parameters for Ffn {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
    }
}
