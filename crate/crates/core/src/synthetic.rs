//! Seeded generators for desk-scale experiments.
//!
//! Both produce a [`Corpus`] exactly like ingest does, so they exercise the
//! same segmentation and training path as real logs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{InteractionRecord, Vocab, SECONDS_PER_HOUR};
use crate::error::Result;
use crate::ingest::{annotate_occurrences, Corpus, DropCounts};

/// Seconds between interactions inside a session.
const STEP: i64 = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct OverfitSpec {
    pub students: usize,
    pub sessions: usize,
    pub interactions: usize,
    pub skills: usize,
    pub questions_per_skill: usize,
    pub seed: u64,
}

impl Default for OverfitSpec {
    fn default() -> Self {
        OverfitSpec {
            students: 200,
            sessions: 5,
            interactions: 20,
            skills: 10,
            questions_per_skill: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgettingSpec {
    pub students: usize,
    pub sessions: usize,
    pub interactions: usize,
    pub skills: usize,
    /// Skills practiced per session.
    pub skills_per_session: usize,
    /// Decay stability used to generate recall.
    pub stability: f64,
    /// Range of gaps between sessions, in hours.
    pub gap_hours: (f64, f64),
    pub seed: u64,
}

impl Default for ForgettingSpec {
    fn default() -> Self {
        ForgettingSpec {
            students: 200,
            sessions: 8,
            interactions: 12,
            skills: 3,
            skills_per_session: 2,
            stability: 0.03,
            gap_hours: (11.0, 300.0),
            seed: 0,
        }
    }
}

fn vocab(skills: usize, questions: usize) -> Vocab {
    let mut v = Vocab::default();
    for q in 1..=questions {
        v.questions.intern(&format!("q{q}"));
    }
    for k in 1..=skills {
        v.skills.intern(&format!("k{k}"));
    }
    v
}

fn corpus(records: Vec<InteractionRecord>, vocab: Vocab) -> Result<Corpus> {
    let n = records.len() as u64;
    Ok(Corpus {
        records: annotate_occurrences(records)?,
        vocab,
        drops: DropCounts {
            parsed: n,
            ..DropCounts::default()
        },
    })
}

fn student_id(i: usize) -> String {
    format!("s{i:05}")
}

/// Answers are a deterministic threshold of a per-student ability against a
/// per-question difficulty, so history and in-session answers fully reveal
/// them. Sessions start 24 to 72 hours apart.
pub fn overfit_fixture(spec: &OverfitSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nq = spec.skills * spec.questions_per_skill;
    let difficulty: Vec<f64> = (0..nq).map(|_| rng.gen()).collect();
    let mut records = Vec::new();
    for s in 0..spec.students {
        let ability: f64 = rng.gen();
        let mut t = 1_600_000_000i64;
        for _ in 0..spec.sessions {
            t += rng.gen_range(24..72) * SECONDS_PER_HOUR;
            for i in 0..spec.interactions {
                let q = rng.gen_range(0..nq);
                let start = t + i as i64 * STEP;
                records.push(InteractionRecord {
                    student_id: student_id(s),
                    question_id: q as u32 + 1,
                    skill_id: (q / spec.questions_per_skill) as u32 + 1,
                    start_time: start,
                    end_time: start + STEP / 2,
                    correct: u8::from(ability > difficulty[q]),
                    occurrence: 1,
                });
            }
        }
    }
    corpus(records, vocab(spec.skills, nq))
}

/// One question per skill. A skill practiced in a session is learned with
/// probability 0.9; later, the chance of a correct answer is
/// `0.05 + 0.9·ξ` for a learned skill, where `ξ = 1/(gap·S + 1)` and the gap
/// runs from the session it was last practiced, and 0.05 otherwise.
pub fn forgetting(spec: &ForgettingSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    for s in 0..spec.students {
        // (learned, start of the last session that practiced the skill)
        let mut memory: Vec<Option<(bool, i64)>> = vec![None; spec.skills];
        let mut t = 1_600_000_000i64;
        for _ in 0..spec.sessions {
            let gap = rng.gen_range(spec.gap_hours.0..spec.gap_hours.1);
            t += (gap * SECONDS_PER_HOUR as f64) as i64;
            let mut practiced: Vec<usize> = Vec::new();
            while practiced.len() < spec.skills_per_session.min(spec.skills) {
                let k = rng.gen_range(0..spec.skills);
                if !practiced.contains(&k) {
                    practiced.push(k);
                }
            }
            let recall: Vec<f64> = practiced
                .iter()
                .map(|&k| match memory[k] {
                    Some((true, last)) => {
                        let hours = (t - last) as f64 / SECONDS_PER_HOUR as f64;
                        0.05 + 0.9 / (hours * spec.stability + 1.0)
                    }
                    _ => 0.05,
                })
                .collect();
            for i in 0..spec.interactions {
                let j = rng.gen_range(0..practiced.len());
                let k = practiced[j];
                let start = t + i as i64 * STEP;
                records.push(InteractionRecord {
                    student_id: student_id(s),
                    question_id: k as u32 + 1,
                    skill_id: k as u32 + 1,
                    start_time: start,
                    end_time: start + STEP / 2,
                    correct: u8::from(rng.gen::<f64>() < recall[j]),
                    occurrence: 1,
                });
            }
            for &k in &practiced {
                memory[k] = Some((rng.gen::<f64>() < 0.9, t));
            }
        }
    }
    corpus(records, vocab(spec.skills, spec.skills))
}
