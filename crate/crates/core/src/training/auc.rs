//! Area under the ROC curve by rank sums, exact in integer arithmetic.

use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` when only one class is present.
///
/// Tied scores share their average rank. Ranks are kept doubled so every
/// quantity is an integer; the final division is the only rounding step.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let npos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let nneg = labels.len() as u128 - npos;
    if npos == 0 || nneg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the doubled average rank i + 1 + j
        let r2 = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += r2 * pos_in_group;
        i = j;
    }
    let u2 = rank_sum2 - npos * (npos + 1);
    Ok(Some(u2 as f64 / (2 * npos * nneg) as f64))
}

/// Quadratic reference: counts every positive-negative pair.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check(scores, labels)?;
    let mut u2: u128 = 0;
    let (mut npos, mut nneg) = (0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            npos += 1;
        } else {
            nneg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                u2 += match scores[i].partial_cmp(&scores[j]) {
                    Some(std::cmp::Ordering::Greater) => 2,
                    Some(std::cmp::Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    if npos == 0 || nneg == 0 {
        return Ok(None);
    }
    Ok(Some(u2 as f64 / (2 * npos * nneg) as f64))
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not binary")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        assert_eq!(auc(&s, &l).unwrap(), Some(0.75));
        assert_eq!(auc_pairwise(&s, &l).unwrap(), Some(0.75));
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), Some(1.0));
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), Some(0.5));
        assert_eq!(auc(&[0.9, 0.1], &[0, 1]).unwrap(), Some(0.0));
    }

    #[test]
    fn single_class_is_undefined() {
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]).unwrap(), None);
        assert_eq!(auc(&[], &[]).unwrap(), None);
        assert!(auc(&[0.1], &[1, 0]).is_err());
        assert!(auc(&[f64::NAN, 0.1], &[1, 0]).is_err());
    }

    proptest! {
        #[test]
        fn rank_sum_equals_pairwise(
            items in prop::collection::vec((0u8..20, 0u8..2), 0..300)
        ) {
            // coarse scores force many ties
            let s: Vec<f64> = items.iter().map(|(v, _)| *v as f64 / 7.0).collect();
            let l: Vec<u8> = items.iter().map(|(_, y)| *y).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc_pairwise(&s, &l).unwrap());
        }

        #[test]
        fn invariant_under_monotone_rescoring(
            items in prop::collection::vec((-50i32..50, 0u8..2), 2..200)
        ) {
            let s: Vec<f64> = items.iter().map(|(v, _)| *v as f64).collect();
            let t: Vec<f64> = s.iter().map(|v| (v / 10.0).exp()).collect();
            let l: Vec<u8> = items.iter().map(|(_, y)| *y).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }
    }
}
