//! Straight-line reference implementation with explicit loops over plain
//! vectors. Shares only parameter storage with the production path.

use crate::config::Ablation;
use crate::datamodel::SECONDS_PER_HOUR;
use crate::kernel::ffn::Ffn;
use crate::kernel::layer_norm::LayerNorm;
use crate::kernel::linear::Linear;
use crate::kernel::multi_head::MultiHead;
use crate::kernel::tensor::Tensor;
use crate::kernel::Block;
use crate::segmentation::PaddedRow;

use super::Model;

type Rows = Vec<Vec<f64>>;

fn lin(x: &[f64], l: &Linear) -> Vec<f64> {
    let (n_in, n_out) = (l.w.shape()[0], l.w.shape()[1]);
    let mut y = vec![0.0; n_out];
    for j in 0..n_out {
        let mut acc = l.b.data()[j];
        for i in 0..n_in {
            acc += x[i] * l.w.data()[i * n_out + j];
        }
        y[j] = acc;
    }
    y
}

fn norm(x: &[f64], ln: &LayerNorm) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = (var + 1e-5).sqrt();
    (0..x.len())
        .map(|j| (x[j] - mean) / sd * ln.gain.data()[j] + ln.bias.data()[j])
        .collect()
}

fn ffn(x: &[f64], f: &Ffn) -> Vec<f64> {
    let h: Vec<f64> = lin(x, &f.l1).into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
    lin(&h, &f.l2)
}

struct Attend<'a> {
    allowed: &'a dyn Fn(usize, usize) -> bool,
    post: Option<&'a [f64]>,
    renorm: Option<&'a [f64]>,
    uniform: bool,
}

fn mha(q: &Rows, kv: &Rows, mh: &MultiHead, a: &Attend) -> Rows {
    let d = mh.d_model();
    let dh = d / mh.heads;
    let qs: Rows = q.iter().map(|x| lin(x, &mh.wq)).collect();
    let ks: Rows = kv.iter().map(|x| lin(x, &mh.wk)).collect();
    let vs: Rows = kv.iter().map(|x| lin(x, &mh.wv)).collect();
    let mut out = Vec::new();
    for i in 0..q.len() {
        let mut concat = vec![0.0; d];
        for h in 0..mh.heads {
            let mut w = vec![0.0; kv.len()];
            if a.uniform {
                let c = (0..kv.len()).filter(|&j| (a.allowed)(i, j)).count() as f64;
                for j in 0..kv.len() {
                    if (a.allowed)(i, j) {
                        w[j] = 1.0 / c;
                    }
                }
            } else {
                let mut s = vec![f64::NEG_INFINITY; kv.len()];
                for j in 0..kv.len() {
                    if (a.allowed)(i, j) {
                        let mut dot = 0.0;
                        for c in 0..dh {
                            dot += qs[i][h * dh + c] * ks[j][h * dh + c];
                        }
                        s[j] = dot / (dh as f64).sqrt();
                        if let Some(r) = a.renorm {
                            s[j] += r[j].ln();
                        }
                    }
                }
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                for j in 0..kv.len() {
                    w[j] = (s[j] - m).exp() / z;
                }
            }
            for j in 0..kv.len() {
                let wj = w[j] * a.post.map_or(1.0, |p| p[j]);
                for c in 0..dh {
                    concat[h * dh + c] += wj * vs[j][h * dh + c];
                }
            }
        }
        out.push(lin(&concat, &mh.wo));
    }
    out
}

/// `mem = None` is self-attention.
fn block(x: &Rows, mem: Option<&Rows>, normalize_mem: bool, residual: bool, b: &Block, a: &Attend) -> Rows {
    let qn: Rows = if residual { x.iter().map(|r| norm(r, &b.ln_attn)).collect() } else { x.clone() };
    let kv: Rows = match mem {
        None => qn.clone(),
        Some(m) if residual && normalize_mem => m.iter().map(|r| norm(r, &b.ln_attn)).collect(),
        Some(m) => m.clone(),
    };
    let att = mha(&qn, &kv, &b.attn, a);
    let mut out = Vec::new();
    for i in 0..x.len() {
        let h: Vec<f64> = if residual { (0..x[i].len()).map(|j| x[i][j] + att[i][j]).collect() } else { att[i].clone() };
        let f = if residual { ffn(&norm(&h, &b.ln_ffn), &b.ffn) } else { ffn(&h, &b.ffn) };
        out.push(if residual { (0..h.len()).map(|j| h[j] + f[j]).collect() } else { f });
    }
    out
}

fn pos(model: &Model, p: usize) -> Vec<f64> {
    let d = model.d_model();
    if model.config.ablation == Ablation::NoPos {
        return vec![0.0; d];
    }
    (0..d)
        .map(|j| {
            let i = j / 2;
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub fn interaction_encode(model: &Model, row: &PaddedRow, slot: usize) -> Vec<f64> {
    let e = &model.params.emb;
    let d = model.d_model();
    let mut xs = Vec::new();
    for t in 0..model.l_int() {
        let i = slot * model.l_int() + t;
        if !row.interaction_mask[i] {
            continue;
        }
        let occ = row.occurrence[i].min(model.config.f_max) as usize;
        let pe = pos(model, t);
        xs.push(
            (0..d)
                .map(|j| {
                    e.skill.row(row.skill[i] as usize)[j]
                        + e.question.row(row.question[i] as usize)[j]
                        + e.occurrence.row(occ)[j]
                        + e.answer.row(row.answer[i] as usize)[j]
                        + pe[j]
                })
                .collect(),
        );
    }
    let avg = model.config.ablation == Ablation::AvgPool;
    let q = if avg {
        vec![0.0; d]
    } else {
        let pe = pos(model, model.l_int());
        (0..d).map(|j| e.akss.data()[j] + pe[j]).collect()
    };
    let a = Attend {
        allowed: &|_, _| true,
        post: None,
        renorm: None,
        uniform: avg,
    };
    block(&vec![q], Some(&xs), true, model.config.residual, &model.params.inner, &a).remove(0)
}

pub fn session_encode(model: &Model, states: &Tensor, times: &[i64], t_ref: i64) -> Vec<f64> {
    let s = model.config.stability;
    let xi: Vec<f64> = times
        .iter()
        .map(|&t| {
            if model.config.ablation == Ablation::NoDecay {
                1.0
            } else {
                1.0 / ((t_ref - t) as f64 / SECONDS_PER_HOUR as f64 * s + 1.0)
            }
        })
        .collect();
    let mem: Rows = (0..states.rows()).map(|i| states.row(i).to_vec()).collect();
    let avg = model.config.ablation == Ablation::AvgPool;
    let q = if avg { vec![0.0; model.d_model()] } else { model.params.emb.rkss.data().to_vec() };
    let renorm = model.config.renormalize_decay;
    let a = Attend {
        allowed: &|_, _| true,
        post: if renorm { None } else { Some(&xi) },
        renorm: if renorm { Some(&xi) } else { None },
        uniform: avg,
    };
    block(&vec![q], Some(&mem), true, model.config.residual, &model.params.inter, &a).remove(0)
}

/// Logit for the interaction answered after `answers` (answer indices), with
/// consolidated state `h`.
pub fn predict_position(model: &Model, h: &[f64], answers: &[u8], query: (u32, u32)) -> f64 {
    let e = &model.params.emb;
    let d = model.d_model();
    let len = answers.len() + 1;
    let mut x: Rows = Vec::new();
    for p in 0..len {
        let tok = if p == 0 { e.rt.data().to_vec() } else { e.answer.row(answers[p - 1] as usize).to_vec() };
        let pe = pos(model, p);
        x.push((0..d).map(|j| h[j] + tok[j] + pe[j]).collect());
    }
    let residual = model.config.residual;
    if model.config.ablation != Ablation::NoKsr {
        let causal = |i: usize, j: usize| j <= i;
        let a = Attend {
            allowed: &causal,
            post: None,
            renorm: None,
            uniform: false,
        };
        for b in &model.params.ksr {
            x = block(&x, None, false, residual, b, &a);
        }
        if residual {
            x = x.iter().map(|r| norm(r, &model.params.ksr_norm)).collect();
        }
    }
    let mut y: Rows = vec![(0..d)
        .map(|j| e.skill.row(query.0 as usize)[j] + e.question.row(query.1 as usize)[j])
        .collect()];
    let a = Attend {
        allowed: &|_, _| true,
        post: None,
        renorm: None,
        uniform: false,
    };
    for b in &model.params.decoder {
        y = block(&y, Some(&x), false, residual, b, &a);
    }
    let mut top = y.remove(0);
    if residual {
        top = norm(&top, &model.params.out_norm);
    }
    let hdn: Vec<f64> = lin(&top, &model.params.head.l1).into_iter().map(|v| v.max(0.0)).collect();
    lin(&hdn, &model.params.head.l2)[0]
}
