//! Learned lookup tables, the rehearsal embedding and sinusoidal positions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::tensor::{join, Parameters, Tensor};

pub const DEFAULT_F_MAX: u32 = 100;

/// Occurrence counts above `f_max` share the last table row.
pub fn occurrence_label(raw: u32, f_max: u32) -> u32 {
    raw.min(f_max)
}

/// Index of the answer row: 0 padding, 1 wrong, 2 right.
pub const ANSWER_ROWS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub skill: Tensor,
    pub question: Tensor,
    pub occurrence: Tensor,
    pub answer: Tensor,
    pub akss: Tensor,
    pub rkss: Tensor,
    pub rt: Tensor,
}

fn lookup<'a>(table: &'a Tensor, id: usize, what: &str) -> Result<&'a [f64]> {
    if id >= table.rows() {
        return Err(Error::Index(format!("{what} id {id} outside table of {} rows", table.rows())));
    }
    Ok(table.row(id))
}

fn add_row(table: &mut Tensor, id: usize, v: &[f64]) {
    for (a, b) in table.row_mut(id).iter_mut().zip(v) {
        *a += b;
    }
}

impl EmbeddingTables {
    /// Tables for `num_skills` skills and `num_questions` questions (ids from 1)
    /// with entries from `U(-1/sqrt(d), 1/sqrt(d))` and zero padding rows.
    pub fn new<R: Rng>(num_skills: usize, num_questions: usize, f_max: u32, d: usize, rng: &mut R) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        let mut t = EmbeddingTables {
            skill: Tensor::uniform(&[num_skills + 1, d], s, rng),
            question: Tensor::uniform(&[num_questions + 1, d], s, rng),
            occurrence: Tensor::uniform(&[f_max as usize + 1, d], s, rng),
            answer: Tensor::uniform(&[ANSWER_ROWS, d], s, rng),
            akss: Tensor::uniform(&[d], s, rng),
            rkss: Tensor::uniform(&[d], s, rng),
            rt: Tensor::uniform(&[d], s, rng),
        };
        t.zero_padding_rows();
        t
    }

    pub fn dim(&self) -> usize {
        self.skill.cols()
    }

    pub fn f_max(&self) -> u32 {
        (self.occurrence.rows() - 1) as u32
    }

    pub fn zero_padding_rows(&mut self) {
        for t in [&mut self.skill, &mut self.question, &mut self.occurrence, &mut self.answer] {
            t.row_mut(0).fill(0.0);
        }
    }

    /// `k + d_q + f + a` for one interaction. `occurrence` is the capped label.
    pub fn rehearsal_embed(&self, skill: u32, question: u32, occurrence: u32, answer: u8) -> Result<Vec<f64>> {
        let mut v = self.query_embed(skill, question)?;
        let f = lookup(&self.occurrence, occurrence as usize, "occurrence")?;
        let a = lookup(&self.answer, answer as usize, "answer")?;
        for ((x, y), z) in v.iter_mut().zip(f).zip(a) {
            *x += y + z;
        }
        Ok(v)
    }

    /// `k + d_q`: what is known about an interaction before it is answered.
    pub fn query_embed(&self, skill: u32, question: u32) -> Result<Vec<f64>> {
        let k = lookup(&self.skill, skill as usize, "skill")?;
        let q = lookup(&self.question, question as usize, "question")?;
        Ok(k.iter().zip(q).map(|(a, b)| a + b).collect())
    }

    pub fn answer_embed(&self, answer: u8) -> Result<&[f64]> {
        lookup(&self.answer, answer as usize, "answer")
    }

    /// Adds `g` to the four rows a rehearsal embedding read.
    pub fn scatter_rehearsal(&mut self, skill: u32, question: u32, occurrence: u32, answer: u8, g: &[f64]) {
        self.scatter_query(skill, question, g);
        add_row(&mut self.occurrence, occurrence as usize, g);
        add_row(&mut self.answer, answer as usize, g);
    }

    pub fn scatter_query(&mut self, skill: u32, question: u32, g: &[f64]) {
        add_row(&mut self.skill, skill as usize, g);
        add_row(&mut self.question, question as usize, g);
    }

    pub fn scatter_answer(&mut self, answer: u8, g: &[f64]) {
        add_row(&mut self.answer, answer as usize, g);
    }
}

impl Parameters for EmbeddingTables {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "skill"), &self.skill);
        f(join(prefix, "question"), &self.question);
        f(join(prefix, "occurrence"), &self.occurrence);
        f(join(prefix, "answer"), &self.answer);
        f(join(prefix, "akss"), &self.akss);
        f(join(prefix, "rkss"), &self.rkss);
        f(join(prefix, "rt"), &self.rt);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "skill"), &mut self.skill);
        f(join(prefix, "question"), &mut self.question);
        f(join(prefix, "occurrence"), &mut self.occurrence);
        f(join(prefix, "answer"), &mut self.answer);
        f(join(prefix, "akss"), &mut self.akss);
        f(join(prefix, "rkss"), &mut self.rkss);
        f(join(prefix, "rt"), &mut self.rt);
    }
}

/// `PE[2i] = sin(pos / 10000^(2i/d))`, `PE[2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encode(pos: usize, d: usize) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(Error::InvalidArgument(format!("positional encoding needs an even dimension, got {d}")));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Precomputed positions `0..len`. A disabled table returns zero rows.
#[derive(Clone, Debug)]
pub struct PositionalTable {
    rows: Tensor,
}

impl PositionalTable {
    pub fn new(len: usize, d: usize, enabled: bool) -> Result<Self> {
        let mut rows = Tensor::zeros(&[len, d]);
        if enabled {
            for p in 0..len {
                rows.row_mut(p).copy_from_slice(&positional_encode(p, d)?);
            }
        } else if d % 2 != 0 {
            return Err(Error::InvalidArgument(format!("positional encoding needs an even dimension, got {d}")));
        }
        Ok(PositionalTable { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, pos: usize) -> &[f64] {
        self.rows.row(pos)
    }
}
