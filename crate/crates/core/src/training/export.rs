//! Delimited-text dumps of learned tables and knowledge-state cells.

use crate::datamodel::Vocab;
use crate::error::{Error, Result};
use crate::kernel::tensor::Tensor;
use crate::model::HitsktParams;

use super::evaluate::StateRow;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    Difficulty,
    Skill,
    Occurrence,
    Answer,
}

impl std::str::FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difficulty" => Ok(Table::Difficulty),
            "skill" => Ok(Table::Skill),
            "occurrence" => Ok(Table::Occurrence),
            "answer" => Ok(Table::Answer),
            _ => Err(Error::InvalidArgument(format!("unknown table `{s}`"))),
        }
    }
}

/// One line per non-padding row: `id,v0,v1,...`. Question and skill rows are
/// labelled with their raw ids when a vocabulary is given; answer rows are
/// labelled `wrong` and `right`.
pub fn embedding_table(params: &HitsktParams, table: Table, vocab: Option<&Vocab>) -> String {
    let e = &params.emb;
    let t: &Tensor = match table {
        Table::Difficulty => &e.question,
        Table::Skill => &e.skill,
        Table::Occurrence => &e.occurrence,
        Table::Answer => &e.answer,
    };
    let mut out = String::new();
    for i in 1..t.rows() {
        let label = match (table, vocab) {
            (Table::Difficulty, Some(v)) => v.questions.raw(i as u32).unwrap_or("?").to_string(),
            (Table::Skill, Some(v)) => v.skills.raw(i as u32).unwrap_or("?").to_string(),
            (Table::Answer, _) => ["", "wrong", "right"][i].to_string(),
            _ => i.to_string(),
        };
        out.push_str(&label);
        for v in t.row(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Header plus one line per row; skills use raw ids when a vocabulary is given.
pub fn state_table(rows: &[StateRow], vocab: Option<&Vocab>) -> String {
    let mut out = String::from("student,session,skill,mean_probability,correct,incorrect\n");
    for r in rows {
        let skill = vocab
            .and_then(|v| v.skills.raw(r.skill))
            .map_or(r.skill.to_string(), str::to_string);
        let p = r.mean_probability.map_or(String::new(), |p| p.to_string());
        out.push_str(&format!("{},{},{},{},{},{}\n", r.student, r.session, skill, p, r.correct, r.incorrect));
    }
    out
}
