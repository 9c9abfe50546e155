use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major `f64` tensor. Most of the crate uses rank 1 and rank 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Stacks equal-length rows into a `[rows.len(), width]` matrix.
    pub fn from_rows(rows: &[Vec<f64>], width: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            assert_eq!(r.len(), width, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![rows.len(), width],
            data,
        }
    }

    /// Entries drawn from `U(-scale, scale)`.
    pub fn uniform<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-scale..=scale)).collect(),
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension of a matrix.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    /// `self[i, :] += v` for every row.
    pub fn add_row_broadcast(&mut self, v: &[f64]) {
        let c = self.cols();
        debug_assert_eq!(c, v.len());
        for row in self.data.chunks_mut(c) {
            for (a, b) in row.iter_mut().zip(v) {
                *a += b;
            }
        }
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Vec<f64> {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }

    /// Columns `[from, from + width)` of a matrix.
    pub fn columns(&self, from: usize, width: usize) -> Tensor {
        let r = self.rows();
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&self.row(i)[from..from + width]);
        }
        Tensor {
            shape: vec![r, width],
            data,
        }
    }

    /// Writes `src` into columns `[from, from + src.cols())`.
    pub fn set_columns(&mut self, from: usize, src: &Tensor) {
        let w = src.cols();
        for i in 0..self.rows() {
            self.row_mut(i)[from..from + w].copy_from_slice(src.row(i));
        }
    }

    fn check_matmul(&self, other: &Tensor, lhs: usize, rhs: usize, what: &str) -> Result<()> {
        if self.shape.len() != 2 || other.shape.len() != 2 || lhs != rhs {
            return Err(Error::Shape(format!(
                "{what}: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// `self [n,k] @ other [k,m]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_matmul(other, self.cols(), other.rows(), "matmul")?;
        let (n, k, m) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let o = &mut out[i * m..(i + 1) * m];
            for (p, &a) in self.data[i * k..(i + 1) * k].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (x, &b) in o.iter_mut().zip(&other.data[p * m..(p + 1) * m]) {
                    *x += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// `self^T [k,n]^T @ other [k,m]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        self.check_matmul(other, self.rows(), other.rows(), "matmul_tn")?;
        let (k, n, m) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let b = &other.data[p * m..(p + 1) * m];
            for (i, &a) in self.data[p * n..(p + 1) * n].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (x, &bv) in out[i * m..(i + 1) * m].iter_mut().zip(b) {
                    *x += a * bv;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// `self [n,k] @ other^T` where `other` is `[m,k]`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.check_matmul(other, self.cols(), other.cols(), "matmul_nt")?;
        let (n, k, m) = (self.rows(), self.cols(), other.rows());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                out[i * m + j] = dot(a, &other.data[j * k..(j + 1) * k]);
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Walks the named tensors of a parameter structure in a fixed order.
///
/// The same structure type doubles as its own gradient buffer, so values and
/// gradients always have matching shapes.
pub trait Parameters: Clone {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.visit_mut("", &mut |_, t| t.fill(0.0));
        g
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t)));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) {
        let src: Vec<&Tensor> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        let mut i = 0;
        self.visit_mut("", &mut |_, t| {
            t.add_assign(src[i]);
            i += 1;
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.all_finite());
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
