//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use hitskt::config::ModelConfig;
use hitskt::datamodel::InteractionRecord;
use hitskt::kernel::{Parameters, Tensor};
use hitskt::model::{Model, ModelShape};
use hitskt::segmentation::{PaddedRow, SequenceLengths};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SKILLS: usize = 5;
pub const QUESTIONS: usize = 9;

pub fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        d_ff: 8,
        ksr_layers: 2,
        decoder_layers: 2,
        ..ModelConfig::default()
    }
}

/// Random model whose biases and norm parameters are moved off their
/// initial values, so that no ReLU sits exactly on a kink.
pub fn random_model(cfg: ModelConfig, l_ses: usize, l_int: usize, seed: u64) -> Model {
    let shape = ModelShape {
        num_skills: SKILLS,
        num_questions: QUESTIONS,
        lengths: SequenceLengths { l_ses, l_int },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::new(cfg, shape, &mut rng).unwrap();
    m.params.visit_mut("", &mut |name, t| {
        if name.ends_with(".b") || name.ends_with(".bias") {
            *t = Tensor::uniform(t.shape(), 0.3, &mut rng);
        } else if name.ends_with(".gain") {
            *t = Tensor::uniform(t.shape(), 1.0, &mut rng);
        }
    });
    m
}

/// Slot `s` holds `lens[s]` right-aligned random interactions; sessions start
/// 15 to 60 hours apart.
pub fn random_row<R: Rng>(l_int: usize, rng: &mut R, lens: &[usize]) -> PaddedRow {
    let lengths = SequenceLengths { l_ses: lens.len(), l_int };
    let n = lens.len() * l_int;
    let mut row = PaddedRow {
        lengths,
        question: vec![0; n],
        skill: vec![0; n],
        occurrence: vec![0; n],
        answer: vec![0; n],
        session_start: vec![0; lens.len()],
        interaction_mask: vec![false; n],
        session_mask: vec![false; lens.len()],
    };
    let mut t = 1_000_000i64;
    for (s, &len) in lens.iter().enumerate() {
        t += rng.gen_range(15..60) * 3600;
        if len == 0 {
            continue;
        }
        row.session_mask[s] = true;
        row.session_start[s] = t;
        for p in l_int - len..l_int {
            let i = row.at(s, p);
            row.skill[i] = rng.gen_range(1..=SKILLS as u32);
            row.question[i] = rng.gen_range(1..=QUESTIONS as u32);
            row.occurrence[i] = rng.gen_range(1..150);
            row.answer[i] = rng.gen_range(1..=2);
            row.interaction_mask[i] = true;
        }
    }
    row
}

/// Time-ordered records for one student. Gaps between consecutive
/// interactions are drawn around `gap_hours` so both sides of the threshold
/// are hit, including exact ties.
pub fn random_student<R: Rng>(rng: &mut R, id: &str, n: usize, gap_hours: f64) -> Vec<InteractionRecord> {
    let threshold = (gap_hours * 3600.0) as i64;
    let mut t = rng.gen_range(0..1_000_000i64);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            let gap = match rng.gen_range(0..5) {
                0 => threshold,
                1 => threshold + 1,
                2 => rng.gen_range(threshold..threshold * 20),
                _ => rng.gen_range(0..threshold),
            };
            t += gap;
        }
        let start = t;
        let end = start + rng.gen_range(0..600);
        out.push(InteractionRecord {
            student_id: id.to_string(),
            question_id: rng.gen_range(1..=QUESTIONS as u32),
            skill_id: rng.gen_range(1..=SKILLS as u32),
            start_time: start,
            end_time: end,
            correct: rng.gen_range(0..=1),
            occurrence: 1,
        });
        t = end;
    }
    out
}
