//! Adam with bias correction, over any [`Parameters`] structure.

use crate::kernel::tensor::{Parameters, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers are kept flat, one tensor per parameter tensor in visit order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .named_tensors()
            .into_iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Adam {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let g: Vec<&Tensor> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_mut("", &mut |_, p| {
            let g = g[i].data();
            let m = ms[i].data_mut();
            let v = vs[i].data_mut();
            for (k, p) in p.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
            i += 1;
        });
    }
}
