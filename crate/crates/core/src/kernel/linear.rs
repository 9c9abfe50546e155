use rand::Rng;

use super::tensor::{join, Parameters, Tensor};
use crate::error::{Error, Result};

/// Affine map on row vectors: `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Weights from `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn new<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            w: Tensor::uniform(&[d_in, d_out], 1.0 / (d_in as f64).sqrt(), rng),
            b: Tensor::zeros(&[d_out]),
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut w = Tensor::zeros(&[d, d]);
        for i in 0..d {
            w.data_mut()[i * d + i] = 1.0;
        }
        Linear {
            w,
            b: Tensor::zeros(&[d]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.shape()[1]
    }

    /// `x: [n, in] -> [n, out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.d_in() {
            return Err(Error::Shape(format!(
                "linear expects {} input features, got {}",
                self.d_in(),
                x.cols()
            )));
        }
        let x2 = if x.shape().len() == 1 {
            Tensor::from_vec(&[1, x.len()], x.data().to_vec())?
        } else {
            x.clone()
        };
        let mut y = x2.matmul(&self.w)?;
        y.add_row_broadcast(self.b.data());
        debug_assert!(y.all_finite(), "linear produced non-finite output");
        Ok(y)
    }

    /// Accumulates weight and bias gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) -> Result<Tensor> {
        let x2 = if x.shape().len() == 1 {
            Tensor::from_vec(&[1, x.len()], x.data().to_vec())?
        } else {
            x.clone()
        };
        grad.w.add_assign(&x2.matmul_tn(dy)?);
        for (g, d) in grad.b.data_mut().iter_mut().zip(dy.sum_rows()) {
            *g += d;
        }
        dy.matmul_nt(&self.w)
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::grad_check::{check_op, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let x = Tensor::from_vec(&[2, 3], vec![1., -2., 3., 0.5, 0., 4.]).unwrap();
        assert_eq!(Linear::identity(3).forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Linear::new(4, 3, &mut rng);
        l.b = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = l.forward(&Tensor::zeros(&[1, 4])).unwrap();
        assert_eq!(y.data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(4, 3, &mut rng);
        assert!(matches!(l.forward(&Tensor::zeros(&[2, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lin = Linear::new(4, 3, &mut rng);
        let x = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let report = check_op(
            &lin,
            &x,
            |p: &Linear, x: &Tensor| p.forward(x).unwrap(),
            |p: &Linear, x: &Tensor, dy: &Tensor, g: &mut Linear| p.backward(x, dy, g).unwrap(),
            &mut rng,
            GradCheckOptions::default(),
        );
        assert!(report.passed(1e-6), "{report}");
    }
}
