//! Interaction encoder (one summary vector per session) and the decayed
//! session encoder (one consolidated vector per predicted session).

use crate::config::Ablation;
use crate::datamodel::SECONDS_PER_HOUR;
use crate::embedding::occurrence_label;
use crate::error::{Error, Result};
use crate::kernel::block::BlockCache;
use crate::kernel::tensor::Tensor;
use crate::kernel::{AttentionMask, Dropout, KeyScale, Memory};
use crate::segmentation::PaddedRow;

use super::{add_into, row_tensor, HitsktParams, Model};

/// `1 / (gap_hours * stability + 1)` for session times in seconds.
pub fn decay_factor(t_ref: i64, t_j: i64, stability: f64) -> Result<f64> {
    if t_ref < t_j {
        return Err(Error::InvalidArgument(format!(
            "reference time {t_ref} precedes session time {t_j}"
        )));
    }
    if !(stability > 0.0) {
        return Err(Error::InvalidArgument(format!("stability must be positive, got {stability}")));
    }
    let gap_hours = (t_ref - t_j) as f64 / SECONDS_PER_HOUR as f64;
    Ok(1.0 / (gap_hours * stability + 1.0))
}

#[derive(Clone, Debug)]
pub struct InnerCache {
    slot: usize,
    positions: Vec<usize>,
    block: BlockCache,
}

impl InnerCache {
    pub fn block(&self) -> &BlockCache {
        &self.block
    }
}

/// Embedded interactions of one session slot: rehearsal embedding plus the
/// position's encoding, one row per real interaction.
pub fn session_inputs(model: &Model, row: &PaddedRow, slot: usize) -> Result<(Vec<usize>, Tensor)> {
    let d = model.d_model();
    let positions = row.real_positions(slot);
    let mut x = Tensor::zeros(&[positions.len(), d]);
    let f_max = model.config.f_max;
    for (j, &t) in positions.iter().enumerate() {
        let i = row.at(slot, t);
        let mut v = model.params.emb.rehearsal_embed(
            row.skill[i],
            row.question[i],
            occurrence_label(row.occurrence[i], f_max),
            row.answer[i],
        )?;
        add_into(&mut v, model.pe(t));
        x.row_mut(j).copy_from_slice(&v);
    }
    Ok((positions, x))
}

/// Summary vector of one session, or `None` for a padding slot (whose state
/// is the zero vector).
pub fn interaction_encode(model: &Model, row: &PaddedRow, slot: usize, drop: &mut Dropout) -> Result<Option<(Vec<f64>, InnerCache)>> {
    let (positions, x) = session_inputs(model, row, slot)?;
    if positions.is_empty() {
        return Ok(None);
    }
    let d = model.d_model();
    let query = if model.config.ablation == Ablation::AvgPool {
        vec![0.0; d]
    } else {
        let mut q = model.params.emb.akss.data().to_vec();
        add_into(&mut q, model.pe(model.l_int()));
        q
    };
    let mask = AttentionMask::full(1, positions.len());
    let opts = model.block_options(KeyScale::None, model.token_weighting());
    let (out, block) = model.params.inner.forward(&row_tensor(&query), Memory::Normalized(&x), &mask, opts, drop)?;
    Ok(Some((out.into_data(), InnerCache { slot, positions, block })))
}

pub fn interaction_backward(model: &Model, row: &PaddedRow, cache: &InnerCache, dh: &[f64], grad: &mut HitsktParams) -> Result<()> {
    let (dq, dx) = model.params.inner.backward(&cache.block, &row_tensor(dh), &mut grad.inner)?;
    if model.config.ablation != Ablation::AvgPool {
        add_into(grad.emb.akss.data_mut(), dq.data());
    }
    let dx = dx.expect("external memory");
    let f_max = model.config.f_max;
    for (j, &t) in cache.positions.iter().enumerate() {
        let i = row.at(cache.slot, t);
        grad.emb.scatter_rehearsal(
            row.skill[i],
            row.question[i],
            occurrence_label(row.occurrence[i], f_max),
            row.answer[i],
            dx.row(j),
        );
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct InterCache {
    pub decay: Vec<f64>,
    block: BlockCache,
}

impl InterCache {
    pub fn block(&self) -> &BlockCache {
        &self.block
    }
}

/// Per-key multipliers for the session encoder: decay factors, or all ones
/// when decay is ablated.
pub fn session_decay(model: &Model, session_times: &[i64], t_ref: i64) -> Result<Vec<f64>> {
    if model.config.ablation == Ablation::NoDecay {
        return Ok(vec![1.0; session_times.len()]);
    }
    session_times
        .iter()
        .map(|&t| decay_factor(t_ref, t, model.config.stability))
        .collect()
}

/// Consolidated state over earlier session summaries `states` (one row each,
/// with start times `session_times`) as seen at `t_ref`. `None` when there is
/// no earlier session; the state is then the zero vector.
pub fn session_encode(
    model: &Model,
    states: &Tensor,
    session_times: &[i64],
    t_ref: i64,
    drop: &mut Dropout,
) -> Result<Option<(Vec<f64>, InterCache)>> {
    if session_times.is_empty() {
        return Ok(None);
    }
    if states.rows() != session_times.len() {
        return Err(Error::Shape(format!("{} states for {} session times", states.rows(), session_times.len())));
    }
    let decay = session_decay(model, session_times, t_ref)?;
    let scale = match (model.config.ablation, model.config.renormalize_decay) {
        (Ablation::NoDecay, _) => KeyScale::None,
        (_, false) => KeyScale::PostSoftmax(&decay),
        (_, true) => KeyScale::Renormalized(&decay),
    };
    let query = if model.config.ablation == Ablation::AvgPool {
        vec![0.0; model.d_model()]
    } else {
        model.params.emb.rkss.data().to_vec()
    };
    let mask = AttentionMask::full(1, session_times.len());
    let opts = model.block_options(scale, model.token_weighting());
    let (out, block) = model.params.inter.forward(&row_tensor(&query), Memory::Normalized(states), &mask, opts, drop)?;
    Ok(Some((out.into_data(), InterCache { decay, block })))
}

/// Returns the gradient with respect to `states`.
pub fn session_backward(model: &Model, cache: &InterCache, dh: &[f64], grad: &mut HitsktParams) -> Result<Tensor> {
    let (dq, dstates) = model.params.inter.backward(&cache.block, &row_tensor(dh), &mut grad.inter)?;
    if model.config.ablation != Ablation::AvgPool {
        add_into(grad.emb.rkss.data_mut(), dq.data());
    }
    Ok(dstates.expect("external memory"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::row::tests::{model_with, random_row};
    use crate::model::tests_oracle as oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decay_closed_forms() {
        let h = SECONDS_PER_HOUR;
        assert_eq!(decay_factor(100, 100, 0.1).unwrap(), 1.0);
        assert_eq!(decay_factor(h, 0, 1.0).unwrap(), 0.5);
        assert!((decay_factor(3 * h, 0, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert!(decay_factor(0, 1, 0.1).is_err());
        assert!(decay_factor(1, 0, 0.0).is_err());
    }

    #[test]
    fn decay_is_monotone_and_vanishes() {
        let h = SECONDS_PER_HOUR;
        let mut prev = 1.0;
        for gap in 1..200 {
            let x = decay_factor(gap * h, 0, 0.1).unwrap();
            assert!(x < prev);
            prev = x;
        }
        for s in [0.01, 0.1, 1.0] {
            assert!(decay_factor(10 * h, 0, s * 2.0).unwrap() < decay_factor(10 * h, 0, s).unwrap());
        }
        assert!(decay_factor(i64::MAX / 2, 0, 0.1).unwrap() < 1e-10);
    }

    fn one_interaction_model(residual: bool) -> Model {
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            d_ff: 8,
            residual,
            ..ModelConfig::default()
        };
        model_with(cfg, 5)
    }

    #[test]
    fn padding_slot_has_no_state() {
        let model = one_interaction_model(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let row = random_row(&model, &mut rng, &[0, 3, 2]);
        assert!(interaction_encode(&model, &row, 0, &mut Dropout::off()).unwrap().is_none());
        assert!(interaction_encode(&model, &row, 1, &mut Dropout::off()).unwrap().is_some());
    }

    #[test]
    fn single_interaction_takes_all_weight() {
        let model = one_interaction_model(false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = random_row(&model, &mut rng, &[1, 1, 1]);
        let (h, cache) = interaction_encode(&model, &row, 1, &mut Dropout::off()).unwrap().unwrap();
        for head in 0..2 {
            assert_eq!(cache.block.attention().weights(head).data(), &[1.0]);
        }
        // without residuals the state is ffn(W_o (x W_v + b_v) + b_o)
        let (_, x) = session_inputs(&model, &row, 1).unwrap();
        let p = &model.params.inner;
        let v = p.attn.wv.forward(&x).unwrap();
        let a = p.attn.wo.forward(&v).unwrap();
        let (want, _) = p.ffn.forward(&a).unwrap();
        for (g, w) in h.iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn interaction_encoder_matches_loop_oracle() {
        for residual in [true, false] {
            for ablation in [Ablation::None, Ablation::AvgPool, Ablation::NoPos] {
                let cfg = ModelConfig {
                    d_model: 8,
                    heads: 2,
                    d_ff: 12,
                    residual,
                    ablation,
                    ..ModelConfig::default()
                };
                let model = model_with(cfg, 9);
                let mut rng = ChaCha8Rng::seed_from_u64(10);
                let row = random_row(&model, &mut rng, &[5, 2, 4]);
                let (h, _) = interaction_encode(&model, &row, 0, &mut Dropout::off()).unwrap().unwrap();
                let want = oracle::interaction_encode(&model, &row, 0);
                for (a, b) in h.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "residual {residual} {ablation}");
                }
            }
        }
    }

    #[test]
    fn duplicated_interaction_leaves_attention_output_unchanged() {
        let model = one_interaction_model(true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut row = random_row(&model, &mut rng, &[2, 1, 1]);
        // make both interactions of slot 0 identical, including their position
        // encoding contribution, by disabling positions
        let mut cfg = model.config.clone();
        cfg.ablation = Ablation::NoPos;
        let model = crate::model::Model::from_params(cfg, model.shape, model.params.clone()).unwrap();
        let l = model.l_int();
        for arr in [&mut row.skill, &mut row.question, &mut row.occurrence] {
            arr[l - 2] = arr[l - 1];
        }
        row.answer[l - 2] = row.answer[l - 1];
        let (_, c2) = interaction_encode(&model, &row, 0, &mut Dropout::off()).unwrap().unwrap();
        row.interaction_mask[l - 2] = false;
        let (_, c1) = interaction_encode(&model, &row, 0, &mut Dropout::off()).unwrap().unwrap();
        for (a, b) in c2.block.attention().context().data().iter().zip(c1.block.attention().context().data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn avg_pool_context_is_mean_of_value_rows() {
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            d_ff: 8,
            ablation: Ablation::AvgPool,
            ..ModelConfig::default()
        };
        let model = model_with(cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let row = random_row(&model, &mut rng, &[4, 1, 1]);
        let (_, cache) = interaction_encode(&model, &row, 0, &mut Dropout::off()).unwrap().unwrap();
        let (_, x) = session_inputs(&model, &row, 0).unwrap();
        let (xn, _) = model.params.inner.ln_attn.forward(&x);
        let v = model.params.inner.attn.wv.forward(&xn).unwrap();
        let n = v.rows() as f64;
        let mean: Vec<f64> = v.sum_rows().iter().map(|s| s / n).collect();
        for (a, b) in cache.block.attention().context().data().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn states(model: &Model, n: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[n, model.d_model()], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn no_history_gives_no_state() {
        let model = one_interaction_model(true);
        let s = Tensor::zeros(&[0, 8]);
        assert!(session_encode(&model, &s, &[], 10, &mut Dropout::off()).unwrap().is_none());
    }

    #[test]
    fn one_session_at_zero_gap_passes_its_value() {
        let model = one_interaction_model(false);
        let s = states(&model, 1, 5);
        let (_, cache) = session_encode(&model, &s, &[50], 50, &mut Dropout::off()).unwrap().unwrap();
        let p = &model.params.inter.attn;
        let v = p.wv.forward(&s).unwrap();
        assert_eq!(cache.decay, vec![1.0]);
        assert_eq!(cache.block.attention().context().data(), v.data());
    }

    #[test]
    fn two_identical_sessions_are_scaled_by_their_decay() {
        let model = one_interaction_model(false);
        let one = states(&model, 1, 6);
        let mut two = Tensor::zeros(&[2, 8]);
        two.row_mut(0).copy_from_slice(one.row(0));
        two.row_mut(1).copy_from_slice(one.row(0));
        let t_ref = 30 * SECONDS_PER_HOUR;
        let (_, c) = session_encode(&model, &two, &[0, 0], t_ref, &mut Dropout::off()).unwrap().unwrap();
        let xi = decay_factor(t_ref, 0, model.config.stability).unwrap();
        let v = model.params.inter.attn.wv.forward(&one).unwrap();
        for (a, b) in c.block.attention().context().data().iter().zip(v.data()) {
            assert!((a - xi * b).abs() < 1e-14);
        }
    }

    #[test]
    fn session_encoder_matches_loop_oracle() {
        for renormalize in [false, true] {
            for ablation in [Ablation::None, Ablation::NoDecay, Ablation::AvgPool] {
                let cfg = ModelConfig {
                    d_model: 8,
                    heads: 4,
                    d_ff: 6,
                    renormalize_decay: renormalize,
                    ablation,
                    ..ModelConfig::default()
                };
                let model = model_with(cfg, 12);
                let s = states(&model, 4, 13);
                let h = SECONDS_PER_HOUR;
                let times = [0, 20 * h, 31 * h, 90 * h];
                let t_ref = 120 * h;
                let (got, _) = session_encode(&model, &s, &times, t_ref, &mut Dropout::off()).unwrap().unwrap();
                let want = oracle::session_encode(&model, &s, &times, t_ref);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "renormalize {renormalize} {ablation}");
                }
            }
        }
    }

    #[test]
    fn shifting_all_times_leaves_state_unchanged() {
        let model = one_interaction_model(true);
        let s = states(&model, 3, 7);
        let h = SECONDS_PER_HOUR;
        let times = [0, 12 * h, 40 * h];
        let (a, _) = session_encode(&model, &s, &times, 55 * h, &mut Dropout::off()).unwrap().unwrap();
        let shift = 987_654 * h;
        let shifted: Vec<i64> = times.iter().map(|t| t + shift).collect();
        let (b, _) = session_encode(&model, &s, &shifted, 55 * h + shift, &mut Dropout::off()).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pre_ffn_norm_is_bounded_by_largest_decayed_value() {
        let model = one_interaction_model(false);
        let s = states(&model, 3, 8);
        let h = SECONDS_PER_HOUR;
        let times = [0, 30 * h, 70 * h];
        let (_, c) = session_encode(&model, &s, &times, 80 * h, &mut Dropout::off()).unwrap().unwrap();
        let v = model.params.inter.attn.wv.forward(&s).unwrap();
        let max_xi = c.decay.iter().cloned().fold(0.0, f64::max);
        let heads = model.params.inter.attn.heads;
        let dh = model.d_model() / heads;
        for head in 0..heads {
            let ctx = c.block.attention().context().columns(head * dh, dh);
            let norm = ctx.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let vh = v.columns(head * dh, dh);
            let max_v = (0..3)
                .map(|i| vh.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            assert!(norm <= max_xi * max_v + 1e-12);
        }
    }
}
