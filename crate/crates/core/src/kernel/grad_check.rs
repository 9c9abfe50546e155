//! Central finite-difference verification of analytic gradients.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
//! Entries where the forward and backward one-sided differences disagree are
//! treated as nondifferentiable points (ReLU kinks): they are counted and
//! reported but excluded from the error maximum.

use std::fmt;

use rand::Rng;

use super::tensor::{Parameters, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub floor: f64,
    /// One-sided slopes differing by more than this (relative) flag a kink.
    pub kink_tol: f64,
    /// Check at most this many entries per block, evenly strided.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            floor: 1e-4,
            kink_tol: 1e-3,
            max_entries: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

impl BlockReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradReport {
    pub blocks: Vec<BlockReport>,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| b.passed(tol))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.blocks.iter().map(|b| b.kinks).sum()
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{:<32} checked {:>6} kinks {:>3} max rel err {:.3e} (at {})",
                b.name, b.checked, b.kinks, b.max_rel_error, b.worst_index
            )?;
        }
        Ok(())
    }
}

fn indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let stride = len as f64 / m as f64;
            (0..m).map(|i| (i as f64 * stride) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_gradient<F>(name: &str, x: &[f64], analytic: &[f64], mut f: F, opts: GradCheckOptions) -> BlockReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut work = x.to_vec();
    let f0 = f(&work);
    let mut report = BlockReport {
        name: name.to_string(),
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in indices(x.len(), opts.max_entries) {
        let orig = work[i];
        work[i] = orig + opts.eps;
        let fp = f(&work);
        work[i] = orig - opts.eps;
        let fm = f(&work);
        work[i] = orig;
        let fwd = (fp - f0) / opts.eps;
        let bwd = (f0 - fm) / opts.eps;
        let numeric = (fp - fm) / (2.0 * opts.eps);
        report.checked += 1;
        if (fwd - bwd).abs() > opts.kink_tol * numeric.abs().max(1.0) {
            report.kinks += 1;
            continue;
        }
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    report
}

fn flat<P: Parameters>(p: &P) -> Vec<(String, Vec<f64>)> {
    p.named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect()
}

fn set_block<P: Parameters>(p: &mut P, block: usize, values: &[f64]) {
    let mut k = 0;
    p.visit_mut("", &mut |_, t| {
        if k == block {
            t.data_mut().copy_from_slice(values);
        }
        k += 1;
    });
}

/// Checks every parameter block of `params` against `analytic` gradients of
/// the scalar `loss`.
pub fn check_parameters<P, L>(params: &P, analytic: &P, loss: L, opts: GradCheckOptions) -> GradReport
where
    P: Parameters,
    L: Fn(&P) -> f64,
{
    let values = flat(params);
    let grads = flat(analytic);
    let mut work = params.clone();
    let mut report = GradReport::default();
    for (b, ((name, x), (_, g))) in values.iter().zip(&grads).enumerate() {
        let block = check_gradient(
            name,
            x,
            g,
            |v| {
                set_block(&mut work, b, v);
                loss(&work)
            },
            opts,
        );
        set_block(&mut work, b, x);
        report.blocks.push(block);
    }
    report
}

/// Gradient check of a differentiable op `y = op(params, x)` through the
/// random projection `L = sum(R * y)`. Covers the parameters and the input.
pub fn check_op<P, F, B, R>(params: &P, x: &Tensor, forward: F, backward: B, rng: &mut R, opts: GradCheckOptions) -> GradReport
where
    P: Parameters,
    F: Fn(&P, &Tensor) -> Tensor,
    B: Fn(&P, &Tensor, &Tensor, &mut P) -> Tensor,
    R: Rng,
{
    let y = forward(params, x);
    let proj = Tensor::uniform(y.shape(), 1.0, rng);
    let objective = |p: &P, x: &Tensor| -> f64 {
        let y = forward(p, x);
        y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let mut g = params.zeros_like();
    let dx = backward(params, x, &proj, &mut g);
    let mut report = check_parameters(params, &g, |p| objective(p, x), opts);
    let shape = x.shape().to_vec();
    report.blocks.push(check_gradient(
        "input",
        x.data(),
        dx.data(),
        |v| objective(params, &Tensor::from_vec(&shape, v.to_vec()).expect("same shape")),
        opts,
    ));
    report
}
