use rand::Rng;

use crate::error::Result;
use crate::kernel::linear::Linear;
use crate::kernel::tensor::{join, Parameters, Tensor};

/// `z = relu(h W1 + b1) W2 + b2` with `W1: [d, d/2]`, `W2: [d/2, 1]`;
/// the predicted probability is `sigmoid(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    x: Tensor,
    hidden: Tensor,
}

impl PredictionHead {
    pub fn new<R: Rng>(d: usize, rng: &mut R) -> Self {
        let mid = (d / 2).max(1);
        PredictionHead {
            l1: Linear::new(d, mid, rng),
            l2: Linear::new(mid, 1, rng),
        }
    }

    /// Logits, one per row of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<(Vec<f64>, HeadCache)> {
        let mut hidden = self.l1.forward(x)?;
        hidden.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let z = self.l2.forward(&hidden)?.into_data();
        Ok((z, HeadCache { x: x.clone(), hidden }))
    }

    pub fn backward(&self, cache: &HeadCache, dz: &[f64], grad: &mut PredictionHead) -> Result<Tensor> {
        let dz = Tensor::from_vec(&[dz.len(), 1], dz.to_vec())?;
        let mut dh = self.l2.backward(&cache.hidden, &dz, &mut grad.l2)?;
        for (g, h) in dh.data_mut().iter_mut().zip(cache.hidden.data()) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        self.l1.backward(&cache.x, &dh, &mut grad.l1)
    }
}

impl Parameters for PredictionHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::grad_check::{check_op, GradCheckOptions};
    use crate::kernel::loss::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_predict_sigmoid_of_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut h = PredictionHead::new(8, &mut rng);
        h.l2.w.fill(0.0);
        h.l2.b.data_mut()[0] = 0.3;
        let (z, _) = h.forward(&Tensor::uniform(&[4, 8], 1.0, &mut rng)).unwrap();
        assert!(z.iter().all(|&v| sigmoid(v) == sigmoid(0.3)));
    }

    #[test]
    fn probability_is_monotone_in_logit() {
        let zs = [-30.0, -2.0, -0.1, 0.0, 0.4, 3.0, 30.0];
        for w in zs.windows(2) {
            assert!(sigmoid(w[0]) < sigmoid(w[1]));
        }
        assert!(zs.iter().all(|&z| sigmoid(z) > 0.0 && sigmoid(z) < 1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = PredictionHead::new(8, &mut rng);
        let x = Tensor::uniform(&[5, 8], 1.0, &mut rng);
        let report = check_op(
            &h,
            &x,
            |p: &PredictionHead, x: &Tensor| {
                let (z, _) = p.forward(x).unwrap();
                Tensor::from_vec(&[z.len(), 1], z).unwrap()
            },
            |p: &PredictionHead, x: &Tensor, dy: &Tensor, g: &mut PredictionHead| {
                let (_, c) = p.forward(x).unwrap();
                p.backward(&c, dy.data(), g).unwrap()
            },
            &mut rng,
            GradCheckOptions::default(),
        );
        assert!(report.passed(1e-5), "{report}");
    }
}
