//! Forward and backward over one padded row: every session slot summarized
//! once, then each target session predicted from the slots before it.

use crate::error::{Error, Result};
use crate::kernel::loss::bce_with_logits;
use crate::kernel::tensor::Tensor;
use crate::kernel::Dropout;
use crate::segmentation::PaddedRow;

use super::ac::{interaction_backward, interaction_encode, session_backward, session_encode, InnerCache, InterCache};
use super::rr::{forward_session, probabilities, session_predict_backward, SessionCache};
use super::{add_into, HitsktParams, Model};

/// Predictions for the real interactions of one target slot.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionPrediction {
    pub slot: usize,
    /// Positions within the slot, ascending.
    pub positions: Vec<usize>,
    pub logits: Vec<f64>,
}

impl SessionPrediction {
    pub fn probabilities(&self) -> Vec<f64> {
        probabilities(&self.logits)
    }

    pub fn labels(&self, row: &PaddedRow) -> Vec<u8> {
        self.positions.iter().map(|&t| row.answer[row.at(self.slot, t)] - 1).collect()
    }
}

#[derive(Clone, Debug)]
struct TargetCache {
    history: Vec<usize>,
    inter: Option<InterCache>,
    session: Option<SessionCache>,
}

#[derive(Clone, Debug)]
pub struct RowOutput {
    pub sessions: Vec<SessionPrediction>,
    inner: Vec<Option<InnerCache>>,
    targets: Vec<TargetCache>,
}

impl RowOutput {
    /// Consolidated-state attention cache of the `k`-th target, if it had history.
    pub fn inter_cache(&self, k: usize) -> Option<&InterCache> {
        self.targets[k].inter.as_ref()
    }
}

/// Predicts the target slots (ascending) of `row`. Each target sees the real
/// slots before it as history and its own answers causally.
pub fn forward_row(model: &Model, row: &PaddedRow, targets: &[usize], drop: &mut Dropout) -> Result<RowOutput> {
    let l_ses = row.lengths.l_ses;
    if row.lengths.l_int != model.l_int() {
        return Err(Error::Shape(format!(
            "row interaction length {} but model built for {}",
            row.lengths.l_int,
            model.l_int()
        )));
    }
    if targets.windows(2).any(|w| w[0] >= w[1]) || targets.iter().any(|&t| t >= l_ses) {
        return Err(Error::InvalidArgument(format!("targets {targets:?} not ascending slots below {l_ses}")));
    }
    let last = targets.last().copied().unwrap_or(0);
    let d = model.d_model();
    let mut inner: Vec<Option<InnerCache>> = vec![None; l_ses];
    let mut states: Vec<Option<Vec<f64>>> = vec![None; l_ses];
    for s in 0..last {
        if row.session_mask[s] {
            if let Some((h, c)) = interaction_encode(model, row, s, drop)? {
                states[s] = Some(h);
                inner[s] = Some(c);
            }
        }
    }
    let mut sessions = Vec::with_capacity(targets.len());
    let mut caches = Vec::with_capacity(targets.len());
    for &t in targets {
        let history: Vec<usize> = (0..t).filter(|&s| states[s].is_some()).collect();
        let mut m = Tensor::zeros(&[history.len(), d]);
        for (k, &s) in history.iter().enumerate() {
            m.row_mut(k).copy_from_slice(states[s].as_ref().expect("encoded"));
        }
        let times: Vec<i64> = history.iter().map(|&s| row.session_start[s]).collect();
        let (h_inter, inter) = match session_encode(model, &m, &times, row.session_start[t], drop)? {
            Some((h, c)) => (h, Some(c)),
            None => (vec![0.0; d], None),
        };
        let (positions, logits, session) = forward_session(model, row, t, &h_inter, drop)?;
        sessions.push(SessionPrediction { slot: t, positions, logits });
        caches.push(TargetCache { history, inter, session });
    }
    Ok(RowOutput {
        sessions,
        inner,
        targets: caches,
    })
}

/// Accumulates parameter gradients for logit gradients `dlogits`, one vector
/// per target in the order of `out.sessions`.
pub fn backward_row(model: &Model, row: &PaddedRow, out: &RowOutput, dlogits: &[Vec<f64>], grad: &mut HitsktParams) -> Result<()> {
    let d = model.d_model();
    let mut dstates: Vec<Option<Vec<f64>>> = vec![None; out.inner.len()];
    for (tc, dz) in out.targets.iter().zip(dlogits) {
        let Some(sc) = &tc.session else { continue };
        let dh_inter = session_predict_backward(model, sc, dz, grad)?;
        if let Some(ic) = &tc.inter {
            let dm = session_backward(model, ic, &dh_inter, grad)?;
            for (k, &s) in tc.history.iter().enumerate() {
                add_into(dstates[s].get_or_insert_with(|| vec![0.0; d]), dm.row(k));
            }
        }
    }
    for (s, ds) in dstates.iter().enumerate() {
        if let (Some(ds), Some(c)) = (ds, &out.inner[s]) {
            interaction_backward(model, row, c, ds, grad)?;
        }
    }
    Ok(())
}

/// Summed cross-entropy over every predicted interaction of the targets,
/// with gradients accumulated into `grad`. Returns `(loss, items, output)`.
pub fn row_loss_and_grad(
    model: &Model,
    row: &PaddedRow,
    targets: &[usize],
    drop: &mut Dropout,
    grad: &mut HitsktParams,
) -> Result<(f64, usize, RowOutput)> {
    let out = forward_row(model, row, targets, drop)?;
    let mut loss = 0.0;
    let mut items = 0;
    let mut dlogits = Vec::with_capacity(out.sessions.len());
    for sp in &out.sessions {
        let labels = sp.labels(row);
        let (l, dz) = bce_with_logits(&sp.logits, &labels, &vec![true; labels.len()])?;
        loss += l;
        items += labels.len();
        dlogits.push(dz);
    }
    backward_row(model, row, &out, &dlogits, grad)?;
    Ok((loss, items, out))
}

/// Loss only, for finite-difference checks and evaluation.
pub fn row_loss(model: &Model, row: &PaddedRow, targets: &[usize]) -> Result<f64> {
    let out = forward_row(model, row, targets, &mut Dropout::off())?;
    let mut loss = 0.0;
    for sp in &out.sessions {
        let labels = sp.labels(row);
        loss += bce_with_logits(&sp.logits, &labels, &vec![true; labels.len()])?.0;
    }
    Ok(loss)
}
