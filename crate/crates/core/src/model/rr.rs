//! Retrieval encoder over the in-session answer history and the answering
//! decoder that turns it into correctness probabilities.

use crate::config::Ablation;
use crate::error::{Error, Result};
use crate::kernel::block::BlockCache;
use crate::kernel::layer_norm::LayerNormCache;
use crate::kernel::loss::sigmoid;
use crate::kernel::tensor::Tensor;
use crate::kernel::{AttentionMask, Dropout, KeyScale, Memory, Weighting};
use crate::segmentation::PaddedRow;

use super::head::HeadCache;
use super::{add_into, HitsktParams, Model};

#[derive(Clone, Debug)]
pub struct KsrCache {
    answers: Vec<u8>,
    blocks: Vec<BlockCache>,
    norm: Option<LayerNormCache>,
}

/// Keys and values for `len` decoder positions. Position 0 carries the
/// retrieval trigger; position `p > 0` carries the answer index `answers[p-1]`
/// (1 wrong, 2 right). Every position also carries `h_inter` and its
/// positional encoding. Position `p` attends to positions `<= p` only.
pub fn ksr_encode(model: &Model, h_inter: &[f64], answers: &[u8], len: usize, drop: &mut Dropout) -> Result<(Tensor, KsrCache)> {
    if len == 0 {
        return Err(Error::InvalidArgument("retrieval sequence needs at least one position".into()));
    }
    if len > model.l_int() {
        return Err(Error::InvalidArgument(format!(
            "retrieval sequence of {len} positions exceeds the interaction length {}",
            model.l_int()
        )));
    }
    if answers.len() + 1 < len {
        return Err(Error::Shape(format!("{} answers for {len} positions", answers.len())));
    }
    let d = model.d_model();
    let emb = &model.params.emb;
    let mut x = Tensor::zeros(&[len, d]);
    for p in 0..len {
        let r = x.row_mut(p);
        r.copy_from_slice(h_inter);
        if p == 0 {
            add_into(r, emb.rt.data());
        } else {
            add_into(r, emb.answer_embed(answers[p - 1])?);
        }
        add_into(r, model.pe(p));
    }
    let answers = answers[..len - 1].to_vec();
    if model.config.ablation == Ablation::NoKsr {
        return Ok((x, KsrCache { answers, blocks: Vec::new(), norm: None }));
    }
    let mask = AttentionMask::causal(len, len);
    let opts = model.block_options(KeyScale::None, Weighting::Softmax);
    let mut blocks = Vec::with_capacity(model.params.ksr.len());
    for b in &model.params.ksr {
        let (y, c) = b.forward(&x, Memory::SelfAttend, &mask, opts, drop)?;
        x = y;
        blocks.push(c);
    }
    let norm = if model.config.residual {
        let (y, c) = model.params.ksr_norm.forward(&x);
        x = y;
        Some(c)
    } else {
        None
    };
    Ok((x, KsrCache { answers, blocks, norm }))
}

/// Returns the gradient with respect to `h_inter`.
pub fn ksr_backward(model: &Model, cache: &KsrCache, dkv: &Tensor, grad: &mut HitsktParams) -> Result<Vec<f64>> {
    let mut dx = match &cache.norm {
        Some(c) => model.params.ksr_norm.backward(c, dkv, &mut grad.ksr_norm),
        None => dkv.clone(),
    };
    for (i, c) in cache.blocks.iter().enumerate().rev() {
        let (d, _) = model.params.ksr[i].backward(c, &dx, &mut grad.ksr[i])?;
        dx = d;
    }
    add_into(grad.emb.rt.data_mut(), dx.row(0));
    for p in 1..dx.rows() {
        grad.emb.scatter_answer(cache.answers[p - 1], dx.row(p));
    }
    Ok(dx.sum_rows())
}

#[derive(Clone, Debug)]
pub struct DecodeCache {
    ids: Vec<(u32, u32)>,
    blocks: Vec<BlockCache>,
    norm: Option<LayerNormCache>,
    head: HeadCache,
}

/// Logits for queries `(skill, question)` in order; query `i` reads
/// retrieval positions `0..=i`.
pub fn decode_session(model: &Model, queries: &[(u32, u32)], kv: &Tensor, drop: &mut Dropout) -> Result<(Vec<f64>, DecodeCache)> {
    if kv.rows() < queries.len() {
        return Err(Error::Shape(format!("{} retrieval positions for {} queries", kv.rows(), queries.len())));
    }
    decode(model, queries, kv, &AttentionMask::causal(queries.len(), kv.rows()), drop)
}

/// Logit for one query reading every retrieval position in `kv`.
pub fn decode_predict(model: &Model, query: (u32, u32), kv: &Tensor, drop: &mut Dropout) -> Result<(f64, DecodeCache)> {
    let (z, c) = decode(model, &[query], kv, &AttentionMask::full(1, kv.rows()), drop)?;
    Ok((z[0], c))
}

fn decode(model: &Model, queries: &[(u32, u32)], kv: &Tensor, mask: &AttentionMask, drop: &mut Dropout) -> Result<(Vec<f64>, DecodeCache)> {
    if kv.rows() == 0 {
        return Err(Error::InvalidArgument("decoder needs at least one key".into()));
    }
    let d = model.d_model();
    let mut y = Tensor::zeros(&[queries.len(), d]);
    for (i, &(s, q)) in queries.iter().enumerate() {
        y.row_mut(i).copy_from_slice(&model.params.emb.query_embed(s, q)?);
    }
    let opts = model.block_options(KeyScale::None, Weighting::Softmax);
    let mut blocks = Vec::with_capacity(model.params.decoder.len());
    for b in &model.params.decoder {
        let (o, c) = b.forward(&y, Memory::Raw(kv), mask, opts, drop)?;
        y = o;
        blocks.push(c);
    }
    let norm = if model.config.residual {
        let (o, c) = model.params.out_norm.forward(&y);
        y = o;
        Some(c)
    } else {
        None
    };
    let (z, head) = model.params.head.forward(&y)?;
    Ok((
        z,
        DecodeCache {
            ids: queries.to_vec(),
            blocks,
            norm,
            head,
        },
    ))
}

/// Returns the gradient with respect to the retrieval keys/values.
pub fn decode_backward(model: &Model, cache: &DecodeCache, dz: &[f64], kv_rows: usize, grad: &mut HitsktParams) -> Result<Tensor> {
    let mut dy = model.params.head.backward(&cache.head, dz, &mut grad.head)?;
    if let Some(c) = &cache.norm {
        dy = model.params.out_norm.backward(c, &dy, &mut grad.out_norm);
    }
    let mut dkv = Tensor::zeros(&[kv_rows, model.d_model()]);
    for (i, c) in cache.blocks.iter().enumerate().rev() {
        let (dq, dm) = model.params.decoder[i].backward(c, &dy, &mut grad.decoder[i])?;
        dkv.add_assign(&dm.expect("external memory"));
        dy = dq;
    }
    for (i, &(s, q)) in cache.ids.iter().enumerate() {
        grad.emb.scatter_query(s, q, dy.row(i));
    }
    Ok(dkv)
}

#[derive(Clone, Debug)]
pub struct SessionCache {
    pub ksr: KsrCache,
    pub decode: DecodeCache,
    pub len: usize,
}

/// Real positions of `slot` and their logits given the consolidated state
/// `h_inter` of the sessions before it. Empty for a padding slot.
pub fn forward_session(
    model: &Model,
    row: &PaddedRow,
    slot: usize,
    h_inter: &[f64],
    drop: &mut Dropout,
) -> Result<(Vec<usize>, Vec<f64>, Option<SessionCache>)> {
    let positions = row.real_positions(slot);
    if positions.is_empty() {
        return Ok((positions, Vec::new(), None));
    }
    let idx: Vec<usize> = positions.iter().map(|&t| row.at(slot, t)).collect();
    let answers: Vec<u8> = idx.iter().map(|&i| row.answer[i]).collect();
    let queries: Vec<(u32, u32)> = idx.iter().map(|&i| (row.skill[i], row.question[i])).collect();
    let len = positions.len();
    let (kv, ksr) = ksr_encode(model, h_inter, &answers, len, drop)?;
    let (z, decode) = decode_session(model, &queries, &kv, drop)?;
    Ok((positions, z, Some(SessionCache { ksr, decode, len })))
}

/// Returns the gradient with respect to `h_inter`.
pub fn session_predict_backward(model: &Model, cache: &SessionCache, dz: &[f64], grad: &mut HitsktParams) -> Result<Vec<f64>> {
    let dkv = decode_backward(model, &cache.decode, dz, cache.len, grad)?;
    ksr_backward(model, &cache.ksr, &dkv, grad)
}

pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| sigmoid(z)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::row::tests::{model_with, random_row};
    use crate::model::tests_oracle as oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(ablation: Ablation, residual: bool, layers: usize) -> Model {
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            d_ff: 10,
            ksr_layers: layers,
            decoder_layers: layers,
            residual,
            ablation,
            ..ModelConfig::default()
        };
        model_with(cfg, 21)
    }

    #[test]
    fn first_position_is_the_trigger_alone() {
        let model = small(Ablation::NoKsr, true, 1);
        let h = vec![0.25; 8];
        let (kv, _) = ksr_encode(&model, &h, &[2, 1], 1, &mut Dropout::off()).unwrap();
        assert_eq!(kv.rows(), 1);
        for j in 0..8 {
            let want = 0.25 + model.params.emb.rt.data()[j] + model.pe(0)[j];
            assert!((kv.row(0)[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_and_tables_leave_answers_and_positions() {
        let mut model = small(Ablation::NoKsr, true, 1);
        model.params.emb.rt.fill(0.0);
        let (kv, _) = ksr_encode(&model, &[0.0; 8], &[2, 1, 2], 3, &mut Dropout::off()).unwrap();
        for p in 0..3 {
            for j in 0..8 {
                let a = if p == 0 { 0.0 } else { model.params.emb.answer.row([2, 1][p - 1])[j] };
                assert_eq!(kv.row(p)[j], a + model.pe(p)[j]);
            }
        }
    }

    #[test]
    fn rejects_overlong_sequences() {
        let model = small(Ablation::None, true, 1);
        let l = model.l_int();
        let answers = vec![1; l + 1];
        assert!(ksr_encode(&model, &[0.0; 8], &answers, l + 1, &mut Dropout::off()).is_err());
        assert!(ksr_encode(&model, &[0.0; 8], &answers, 0, &mut Dropout::off()).is_err());
    }

    #[test]
    fn head_with_zero_weights_predicts_bias() {
        let mut model = small(Ablation::None, true, 1);
        model.params.head.l2.w.fill(0.0);
        model.params.head.l2.b.data_mut()[0] = -0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let row = random_row(&model, &mut rng, &[3, 4, 2]);
        let (_, z, _) = forward_session(&model, &row, 2, &[0.1; 8], &mut Dropout::off()).unwrap();
        assert!(z.iter().all(|&v| v == -0.7));
    }

    #[test]
    fn padding_slot_predicts_nothing() {
        let model = small(Ablation::None, true, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let row = random_row(&model, &mut rng, &[0, 2, 2]);
        let (p, z, c) = forward_session(&model, &row, 0, &[0.0; 8], &mut Dropout::off()).unwrap();
        assert!(p.is_empty() && z.is_empty() && c.is_none());
    }

    #[test]
    fn session_matches_per_position_calls_and_loop_oracle() {
        for ablation in [Ablation::None, Ablation::NoKsr, Ablation::NoPos] {
            for residual in [true, false] {
                for layers in [1, 2] {
                    let model = small(ablation, residual, layers);
                    let mut rng = ChaCha8Rng::seed_from_u64(5);
                    let row = random_row(&model, &mut rng, &[2, 3, 3]);
                    let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let (positions, z, _) = forward_session(&model, &row, 2, &h, &mut Dropout::off()).unwrap();
                    assert_eq!(positions.len(), 3);
                    let idx: Vec<usize> = positions.iter().map(|&t| row.at(2, t)).collect();
                    let answers: Vec<u8> = idx.iter().map(|&i| row.answer[i]).collect();
                    for t in 0..3 {
                        // prefix of length t + 1: the trigger plus answers before t
                        let (kv, _) = ksr_encode(&model, &h, &answers[..t], t + 1, &mut Dropout::off()).unwrap();
                        let q = (row.skill[idx[t]], row.question[idx[t]]);
                        let (zt, _) = decode_predict(&model, q, &kv, &mut Dropout::off()).unwrap();
                        assert!((z[t] - zt).abs() < 1e-13);
                        let want = oracle::predict_position(&model, &h, &answers[..t], q);
                        assert!((z[t] - want).abs() < 1e-12, "{ablation} residual {residual} layers {layers} t {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn later_answers_never_reach_earlier_predictions() {
        let model = small(Ablation::None, true, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let row = random_row(&model, &mut rng, &[1, 1, 4]);
        let h = vec![0.3; 8];
        let (positions, z, _) = forward_session(&model, &row, 2, &h, &mut Dropout::off()).unwrap();
        for t in 0..positions.len() {
            let mut r2 = row.clone();
            let i = r2.at(2, positions[t]);
            r2.answer[i] = 3 - r2.answer[i];
            let (_, z2, _) = forward_session(&model, &r2, 2, &h, &mut Dropout::off()).unwrap();
            assert_eq!(z[..=t], z2[..=t]);
        }
    }
}
