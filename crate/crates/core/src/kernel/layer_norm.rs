use super::tensor::{join, Parameters, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization to zero mean and unit variance, then `gain * x + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        assert!(d >= 2, "layer norm needs at least two features");
        LayerNorm {
            gain: Tensor::filled(&[d], 1.0),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let d = x.cols();
        let n = x.rows();
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut y = Tensor::zeros(&[n, d]);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(i);
            for (o, v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let yr = y.row_mut(i);
            for j in 0..d {
                yr[j] = xhat.row(i)[j] * self.gain.data()[j] + self.bias.data()[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor, grad: &mut LayerNorm) -> Tensor {
        let d = dy.cols();
        let n = dy.rows();
        let mut dx = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let xh = cache.xhat.row(i);
            let dyr = dy.row(i);
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            let mut dxh = vec![0.0; d];
            for j in 0..d {
                grad.gain.data_mut()[j] += dyr[j] * xh[j];
                grad.bias.data_mut()[j] += dyr[j];
                dxh[j] = dyr[j] * self.gain.data()[j];
                sum_dxh += dxh[j];
                sum_dxh_xh += dxh[j] * xh[j];
            }
            let is = cache.inv_std[i];
            let out = dx.row_mut(i);
            for j in 0..d {
                out[j] = is / d as f64 * (d as f64 * dxh[j] - sum_dxh - xh[j] * sum_dxh_xh);
            }
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "gain"), &self.gain);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gain"), &mut self.gain);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
