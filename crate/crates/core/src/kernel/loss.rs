use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_lengths(n: usize, labels: &[u8], mask: &[bool]) -> Result<()> {
    if labels.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "{n} predictions, {} labels, {} mask entries",
            labels.len(),
            mask.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not binary")));
    }
    Ok(())
}

/// Summed binary cross-entropy over unmasked items and `dL/dp`.
pub fn bce_loss(p: &[f64], labels: &[u8], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_lengths(p.len(), labels, mask)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for i in 0..p.len() {
        if !mask[i] {
            continue;
        }
        let q = p[i];
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidArgument(format!("probability {q} outside (0, 1)")));
        }
        let a = f64::from(labels[i]);
        loss -= a * q.ln() + (1.0 - a) * (1.0 - q).ln();
        grad[i] = (q - a) / (q * (1.0 - q));
    }
    Ok((loss, grad))
}

/// Same loss expressed on logits `z` with `p = sigmoid(z)`; returns `dL/dz = p - a`.
/// Stable for saturated logits where `p` rounds to 0 or 1.
pub fn bce_with_logits(z: &[f64], labels: &[u8], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_lengths(z.len(), labels, mask)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; z.len()];
    for i in 0..z.len() {
        if !mask[i] {
            continue;
        }
        let a = f64::from(labels[i]);
        loss += softplus(z[i]) - a * z[i];
        grad[i] = sigmoid(z[i]) - a;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::grad_check::{check_gradient, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_probability_costs_ln2() {
        let (l, _) = bce_loss(&[0.5, 0.5], &[1, 0], &[true, true]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_costs_little() {
        let (l, _) = bce_loss(&[1.0 - 1e-12], &[1], &[true]).unwrap();
        assert!(l < 1e-11);
    }

    #[test]
    fn rejects_degenerate_probabilities() {
        assert!(bce_loss(&[1.0], &[1], &[true]).is_err());
        assert!(bce_loss(&[0.0], &[0], &[true]).is_err());
        // masked entries are not inspected
        assert!(bce_loss(&[0.0], &[0], &[false]).is_ok());
    }

    #[test]
    fn sum_of_items_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 40;
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98)).collect();
        let a: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let m: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
        let (l, g) = bce_loss(&p, &a, &m).unwrap();
        let oracle: f64 = (0..n)
            .filter(|&i| m[i])
            .map(|i| if a[i] == 1 { -p[i].ln() } else { -(1.0 - p[i]).ln() })
            .sum();
        assert!((l - oracle).abs() < 1e-12);
        let r = check_gradient("p", &p, &g, |v| bce_loss(v, &a, &m).unwrap().0, GradCheckOptions::default());
        assert!(r.passed(1e-5), "{r:?}");

        let z: Vec<f64> = p.iter().map(|q| (q / (1.0 - q)).ln()).collect();
        let (lz, gz) = bce_with_logits(&z, &a, &m).unwrap();
        assert!((lz - l).abs() < 1e-10);
        let r = check_gradient("z", &z, &gz, |v| bce_with_logits(v, &a, &m).unwrap().0, GradCheckOptions::default());
        assert!(r.passed(1e-5), "{r:?}");
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        for z in [-800.0, -3.0, 0.0, 2.5, 40.0] {
            let s = sigmoid(z);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
