//! Shared domain types: interaction records, sessions, student histories and
//! the dense id vocabulary.
//!
//! Timestamps are integer seconds since the epoch. Dense question and skill
//! indices start at 1; index 0 is reserved for padding in every lookup table.

use std::collections::HashMap;
use std::fmt;

pub const SECONDS_PER_HOUR: i64 = 3600;

/// One graded student/question event.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub student_id: String,
    /// Dense question index, `>= 1` for real questions.
    pub question_id: u32,
    /// Dense skill index, `>= 1` for real skills.
    pub skill_id: u32,
    pub start_time: i64,
    pub end_time: i64,
    pub correct: u8,
    /// Count of this student's attempts at this question up to and including
    /// this one. Stored uncapped.
    pub occurrence: u32,
}

/// A single invariant violation reported by [`validate_record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    CorrectNotBinary,
    NegativeDuration,
    ZeroOccurrence,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::CorrectNotBinary => "correct not binary",
            Violation::NegativeDuration => "negative duration",
            Violation::ZeroOccurrence => "occurrence below 1",
        })
    }
}

/// Returns every invariant the record breaks; an empty list means valid.
pub fn validate_record(r: &InteractionRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if r.correct > 1 {
        out.push(Violation::CorrectNotBinary);
    }
    if r.end_time < r.start_time {
        out.push(Violation::NegativeDuration);
    }
    if r.occurrence == 0 {
        out.push(Violation::ZeroOccurrence);
    }
    out
}

impl InteractionRecord {
    pub fn duration(&self) -> i64 {
        self.end_time - self.start_time
    }
}

/// A maximal run of interactions whose consecutive gaps stay within the
/// session threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub interactions: Vec<InteractionRecord>,
    pub start_time: i64,
    pub end_time: i64,
}

impl Session {
    /// Builds a session from a nonempty, time-ordered run.
    pub fn new(interactions: Vec<InteractionRecord>) -> Self {
        assert!(!interactions.is_empty(), "a session needs at least one interaction");
        let start_time = interactions[0].start_time;
        let end_time = interactions
            .iter()
            .map(|r| r.end_time)
            .max()
            .expect("nonempty");
        Session {
            interactions,
            start_time,
            end_time,
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentHistory {
    pub student_id: String,
    pub sessions: Vec<Session>,
}

impl StudentHistory {
    pub fn interaction_count(&self) -> usize {
        self.sessions.iter().map(Session::len).sum()
    }

    /// All records in order, sessions concatenated.
    pub fn flatten(&self) -> Vec<InteractionRecord> {
        self.sessions
            .iter()
            .flat_map(|s| s.interactions.iter().cloned())
            .collect()
    }
}

/// Raw id to dense index maps for questions and skills.
///
/// Dense ids are assigned in order of first appearance, starting at 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    pub questions: IdMap,
    pub skills: IdMap,
}

impl Vocab {
    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn num_skills(&self) -> usize {
        self.skills.len()
    }
}

/// Bidirectional map between raw string ids and dense indices `1..=len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn from_raw(raw: Vec<String>) -> Self {
        let index = raw
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i as u32 + 1))
            .collect();
        IdMap { raw, index }
    }

    /// Returns the dense id for `raw`, assigning the next one if unseen.
    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        self.raw.push(raw.to_string());
        let id = self.raw.len() as u32;
        self.index.insert(raw.to_string(), id);
        id
    }

    pub fn get(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    /// The raw id behind a dense index; `None` for padding or out of range.
    pub fn raw(&self, id: u32) -> Option<&str> {
        if id == 0 {
            return None;
        }
        self.raw.get(id as usize - 1).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> InteractionRecord {
        InteractionRecord {
            student_id: "s".into(),
            question_id: 1,
            skill_id: 1,
            start_time: 10,
            end_time: 12,
            correct: 1,
            occurrence: 1,
        }
    }

    #[test]
    fn valid_record_has_no_violations() {
        assert!(validate_record(&rec()).is_empty());
    }

    #[test]
    fn non_binary_correct_is_reported() {
        let r = InteractionRecord { correct: 2, ..rec() };
        let v = validate_record(&r);
        assert_eq!(v, vec![Violation::CorrectNotBinary]);
        assert_eq!(v[0].to_string(), "correct not binary");
    }

    #[test]
    fn negative_duration_is_reported() {
        let r = InteractionRecord { end_time: 9, ..rec() };
        let v = validate_record(&r);
        assert_eq!(v, vec![Violation::NegativeDuration]);
        assert_eq!(v[0].to_string(), "negative duration");
    }

    #[test]
    fn all_violations_are_collected() {
        let r = InteractionRecord {
            correct: 7,
            end_time: 0,
            occurrence: 0,
            ..rec()
        };
        assert_eq!(validate_record(&r).len(), 3);
    }

    #[test]
    fn id_map_never_hands_out_padding() {
        let mut m = IdMap::default();
        assert_eq!(m.intern("q9"), 1);
        assert_eq!(m.intern("q3"), 2);
        assert_eq!(m.intern("q9"), 1);
        assert_eq!(m.raw(0), None);
        assert_eq!(m.raw(2), Some("q3"));
        assert_eq!(IdMap::from_raw(m.raw_ids().to_vec()), m);
    }
}
