//! Read-only prediction over windows, AUC, and the per-session skill table.

use rayon::prelude::*;

use crate::datamodel::StudentHistory;
use crate::error::{Error, Result};
use crate::kernel::loss::bce_with_logits;
use crate::kernel::Dropout;
use crate::model::{forward_row, Model};

use super::auc::auc;
use super::split::{windows, Sample};

/// One predicted interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemPrediction {
    pub student: usize,
    pub session: usize,
    /// Index within the original session, before trimming.
    pub index: usize,
    pub skill: u32,
    pub question: u32,
    pub probability: f64,
    pub loss: f64,
    pub correct: u8,
}

/// Predictions for every target of every sample, in sample order.
pub fn predict(model: &Model, histories: &[StudentHistory], samples: &[Sample]) -> Result<Vec<ItemPrediction>> {
    let l_int = model.l_int();
    let per: Vec<Result<Vec<ItemPrediction>>> = samples
        .par_iter()
        .map(|s| {
            let out = forward_row(model, &s.row, &s.targets, &mut Dropout::off())?;
            let mut items = Vec::new();
            for (sp, &n) in out.sessions.iter().zip(&s.sessions) {
                let session = &histories[s.student].sessions[n];
                let labels = sp.labels(&s.row);
                let probs = sp.probabilities();
                for (k, &t) in sp.positions.iter().enumerate() {
                    let index = session.len() + t - l_int;
                    let r = &session.interactions[index];
                    let loss = bce_with_logits(&sp.logits[k..k + 1], &labels[k..k + 1], &[true])?.0;
                    items.push(ItemPrediction {
                        student: s.student,
                        session: n,
                        index,
                        skill: r.skill_id,
                        question: r.question_id,
                        probability: probs[k],
                        loss,
                        correct: labels[k],
                    });
                }
            }
            Ok(items)
        })
        .collect();
    let mut all = Vec::new();
    for p in per {
        all.extend(p?);
    }
    Ok(all)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `None` when the split has no items or only one class.
    pub auc: Option<f64>,
    pub mean_loss: Option<f64>,
    pub items: usize,
    pub predictions: Vec<ItemPrediction>,
}

impl Evaluation {
    pub fn from_predictions(predictions: Vec<ItemPrediction>) -> Result<Self> {
        let scores: Vec<f64> = predictions.iter().map(|p| p.probability).collect();
        let labels: Vec<u8> = predictions.iter().map(|p| p.correct).collect();
        let items = predictions.len();
        let mean_loss = (items > 0).then(|| predictions.iter().map(|p| p.loss).sum::<f64>() / items as f64);
        Ok(Evaluation {
            auc: auc(&scores, &labels)?,
            mean_loss,
            items,
            predictions,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.items == 0
    }
}

impl std::fmt::Display for Evaluation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return write!(f, "items: 0\nauc: no data");
        }
        writeln!(f, "items: {}", self.items)?;
        match self.auc {
            Some(a) => writeln!(f, "auc: {a}")?,
            None => writeln!(f, "auc: undefined (one class)")?,
        }
        write!(f, "mean_loss: {}", self.mean_loss.expect("nonempty"))
    }
}

pub fn evaluate(model: &Model, histories: &[StudentHistory], samples: &[Sample]) -> Result<Evaluation> {
    Evaluation::from_predictions(predict(model, histories, samples)?)
}

/// How predictions are averaged within a (session, skill) cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weights {
    Uniform,
    /// Each prediction weighted by the raw occurrence count of its question.
    Count,
}

impl std::str::FromStr for Weights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weights::Uniform),
            "count" => Ok(Weights::Count),
            _ => Err(Error::InvalidArgument(format!("unknown weighting `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateRow {
    pub student: String,
    pub session: usize,
    pub skill: u32,
    /// `None` if every interaction of the skill in this session was trimmed
    /// away and so never predicted.
    pub mean_probability: Option<f64>,
    pub correct: usize,
    pub incorrect: usize,
}

/// Mean predicted probability and answer counts per (session, skill) for one
/// student. Every session is predicted, the first from an empty history.
/// Counts cover all interactions of the session, including trimmed ones.
pub fn knowledge_state(model: &Model, history: &StudentHistory, weights: Weights) -> Result<Vec<StateRow>> {
    let hs = std::slice::from_ref(history);
    let samples = windows(history, 0, model.shape.lengths, 0..history.sessions.len());
    let preds = predict(model, hs, &samples)?;
    let mut rows = Vec::new();
    for (n, session) in history.sessions.iter().enumerate() {
        let mut skills: Vec<u32> = session.interactions.iter().map(|r| r.skill_id).collect();
        skills.sort_unstable();
        skills.dedup();
        for skill in skills {
            let (mut num, mut den) = (0.0, 0.0);
            for p in preds.iter().filter(|p| p.session == n && p.skill == skill) {
                let w = match weights {
                    Weights::Uniform => 1.0,
                    Weights::Count => session.interactions[p.index].occurrence as f64,
                };
                num += w * p.probability;
                den += w;
            }
            let of_skill = session.interactions.iter().filter(|r| r.skill_id == skill);
            let correct = of_skill.clone().filter(|r| r.correct == 1).count();
            rows.push(StateRow {
                student: history.student_id.clone(),
                session: n,
                skill,
                mean_probability: (den > 0.0).then(|| num / den),
                correct,
                incorrect: of_skill.count() - correct,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::ModelShape;
    use crate::segmentation::{split_corpus, SequenceLengths, DEFAULT_GAP_HOURS};
    use crate::synthetic::{forgetting, ForgettingSpec};
    use crate::training::split::{split_samples, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(l_int: usize) -> (Model, Vec<StudentHistory>) {
        let c = forgetting(&ForgettingSpec {
            students: 6,
            sessions: 4,
            interactions: 7,
            skills: 4,
            ..ForgettingSpec::default()
        })
        .unwrap();
        let hs = split_corpus(&c.records, DEFAULT_GAP_HOURS).unwrap();
        let shape = ModelShape {
            num_skills: 4,
            num_questions: 4,
            lengths: SequenceLengths::new(2, l_int).unwrap(),
        };
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            d_ff: 8,
            ..ModelConfig::default()
        };
        (Model::new(cfg, shape, &mut ChaCha8Rng::seed_from_u64(5)).unwrap(), hs)
    }

    #[test]
    fn empty_split_reports_no_data() {
        let (model, hs) = setup(8);
        let e = evaluate(&model, &hs, &[]).unwrap();
        assert!(e.is_empty() && e.auc.is_none());
        assert_eq!(e.to_string(), "items: 0\nauc: no data");
    }

    #[test]
    fn predictions_point_back_at_their_records() {
        let (model, hs) = setup(4);
        let samples = split_samples(&hs, model.shape.lengths, Split::All);
        let preds = predict(&model, &hs, &samples).unwrap();
        // sessions of 7 trimmed to the last 4
        assert_eq!(preds.len(), 6 * 4 * 4);
        for p in &preds {
            let r = &hs[p.student].sessions[p.session].interactions[p.index];
            assert!(p.index >= 3);
            assert_eq!((r.skill_id, r.question_id, r.correct), (p.skill, p.question, p.correct));
            assert!(p.probability > 0.0 && p.probability < 1.0);
        }
        let e = Evaluation::from_predictions(preds.clone()).unwrap();
        let oracle = crate::training::auc::auc_pairwise(
            &preds.iter().map(|p| p.probability).collect::<Vec<_>>(),
            &preds.iter().map(|p| p.correct).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(e.auc, oracle);
    }

    #[test]
    fn state_rows_cover_touched_skills_and_recount() {
        let (model, hs) = setup(8);
        for weights in [Weights::Uniform, Weights::Count] {
            for h in &hs {
                let rows = knowledge_state(&model, h, weights).unwrap();
                let cells: usize = h
                    .sessions
                    .iter()
                    .map(|s| {
                        let mut k: Vec<u32> = s.interactions.iter().map(|r| r.skill_id).collect();
                        k.sort();
                        k.dedup();
                        k.len()
                    })
                    .sum();
                assert_eq!(rows.len(), cells);
                for skill in 1..=4u32 {
                    let raw = h.flatten().iter().filter(|r| r.skill_id == skill).count();
                    let counted: usize = rows.iter().filter(|r| r.skill == skill).map(|r| r.correct + r.incorrect).sum();
                    assert_eq!(raw, counted);
                }
                assert!(rows.iter().all(|r| r.mean_probability.is_some_and(|p| p > 0.0 && p < 1.0)));
            }
        }
    }

    #[test]
    fn uniform_mean_matches_direct_average() {
        let (model, hs) = setup(8);
        let rows = knowledge_state(&model, &hs[0], Weights::Uniform).unwrap();
        let samples = windows(&hs[0], 0, model.shape.lengths, 0..hs[0].sessions.len());
        let preds = predict(&model, &hs[..1], &samples).unwrap();
        for r in &rows {
            let ps: Vec<f64> = preds.iter().filter(|p| p.session == r.session && p.skill == r.skill).map(|p| p.probability).collect();
            let mean = ps.iter().sum::<f64>() / ps.len() as f64;
            assert!((r.mean_probability.unwrap() - mean).abs() < 1e-15);
        }
    }
}
