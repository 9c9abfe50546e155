//! Session splitting, sequence-length selection and fixed-shape padding.
//!
//! A new session starts whenever the gap between the end of one interaction
//! and the start of the next is strictly longer than the threshold. Padded
//! rows are left-padded so that real data is right-aligned: the most recent
//! session sits in the last slot and, inside each session, the most recent
//! interaction sits in the last position.

use crate::datamodel::{InteractionRecord, Session, StudentHistory, SECONDS_PER_HOUR};
use crate::error::{Error, Result};

pub const DEFAULT_GAP_HOURS: f64 = 10.0;

/// Splits one student's time-ordered records into sessions.
pub fn split_sessions(records: &[InteractionRecord], gap_hours: f64) -> Result<StudentHistory> {
    if !(gap_hours > 0.0 && gap_hours.is_finite()) {
        return Err(Error::InvalidArgument(format!("gap_hours must be positive, got {gap_hours}")));
    }
    let student_id = records.first().map(|r| r.student_id.clone()).unwrap_or_default();
    let mut sessions = Vec::new();
    let mut current: Vec<InteractionRecord> = Vec::new();
    for r in records {
        if r.student_id != student_id {
            return Err(Error::InvalidArgument(format!(
                "split_sessions got records of {} and {}",
                student_id, r.student_id
            )));
        }
        if let Some(prev) = current.last() {
            if r.start_time < prev.start_time {
                return Err(Error::Unsorted(format!(
                    "student {student_id}: start {} after {}",
                    r.start_time, prev.start_time
                )));
            }
            // compared in hours: scaling the threshold to seconds instead
            // rounds, so 65/60 h would become 3899.9999999999995 s
            let gap = (r.start_time - prev.end_time) as f64 / SECONDS_PER_HOUR as f64;
            if gap > gap_hours {
                sessions.push(Session::new(std::mem::take(&mut current)));
            }
        }
        current.push(r.clone());
    }
    if !current.is_empty() {
        sessions.push(Session::new(current));
    }
    Ok(StudentHistory { student_id, sessions })
}

/// Splits a corpus grouped by student into one history per student, in input
/// order.
pub fn split_corpus(records: &[InteractionRecord], gap_hours: f64) -> Result<Vec<StudentHistory>> {
    records
        .chunk_by(|a, b| a.student_id == b.student_id)
        .map(|chunk| split_sessions(chunk, gap_hours))
        .collect()
}

/// Fixed sequence lengths: sessions per row and interactions per session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLengths {
    pub l_ses: usize,
    pub l_int: usize,
}

impl SequenceLengths {
    pub fn new(l_ses: usize, l_int: usize) -> Result<Self> {
        for (name, v) in [("l_ses", l_ses), ("l_int", l_int)] {
            if v == 0 || !v.is_power_of_two() {
                return Err(Error::InvalidArgument(format!("{name} must be a power of two, got {v}")));
            }
        }
        Ok(SequenceLengths { l_ses, l_int })
    }
}

/// Third quartile with linear interpolation between order statistics
/// (`h = 0.75 * (n - 1)`).
pub fn third_quartile(values: &[usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let h = 0.75 * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] as f64 + (h - lo as f64) * (v[hi] as f64 - v[lo] as f64))
}

/// Closest power of two by absolute distance; ties go to the larger one.
pub fn nearest_power_of_two(x: f64) -> usize {
    if x <= 1.0 {
        return 1;
    }
    let mut lo = 1usize;
    while ((lo * 2) as f64) <= x {
        lo *= 2;
    }
    let hi = lo * 2;
    if x - (lo as f64) < (hi as f64) - x {
        lo
    } else {
        hi
    }
}

/// Picks both lengths from the third quartile of the corpus distributions.
pub fn compute_seq_lengths(histories: &[StudentHistory]) -> Result<SequenceLengths> {
    let per_student: Vec<usize> = histories.iter().map(|h| h.sessions.len()).collect();
    let per_session: Vec<usize> = histories
        .iter()
        .flat_map(|h| h.sessions.iter().map(Session::len))
        .collect();
    let q_ses = third_quartile(&per_student).ok_or(Error::EmptyCorpus)?;
    let q_int = third_quartile(&per_session).ok_or(Error::EmptyCorpus)?;
    SequenceLengths::new(nearest_power_of_two(q_ses), nearest_power_of_two(q_int))
}

/// Answer index for lookups: 0 padding, 1 wrong, 2 right.
pub fn answer_index(correct: u8) -> u8 {
    correct + 1
}

/// One student's sessions trimmed and padded to `[l_ses, l_int]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedRow {
    pub lengths: SequenceLengths,
    pub question: Vec<u32>,
    pub skill: Vec<u32>,
    /// Raw occurrence counts; capped at lookup time.
    pub occurrence: Vec<u32>,
    /// 0 padding, 1 wrong, 2 right.
    pub answer: Vec<u8>,
    /// Session start times in seconds; 0 for padding sessions.
    pub session_start: Vec<i64>,
    pub interaction_mask: Vec<bool>,
    pub session_mask: Vec<bool>,
}

impl PaddedRow {
    #[inline]
    pub fn at(&self, slot: usize, pos: usize) -> usize {
        slot * self.lengths.l_int + pos
    }

    /// Positions of real interactions within a session slot, ascending.
    pub fn real_positions(&self, slot: usize) -> Vec<usize> {
        (0..self.lengths.l_int)
            .filter(|&t| self.interaction_mask[self.at(slot, t)])
            .collect()
    }

    pub fn real_sessions(&self) -> Vec<usize> {
        (0..self.lengths.l_ses).filter(|&s| self.session_mask[s]).collect()
    }

    /// Correctness labels (0/1) of the real interactions in a slot.
    pub fn labels(&self, slot: usize) -> Vec<u8> {
        self.real_positions(slot)
            .into_iter()
            .map(|t| self.answer[self.at(slot, t)] - 1)
            .collect()
    }
}

/// Keeps the most recent `l_ses` sessions and, within each, the most recent
/// `l_int` interactions; shorter sequences are left-padded.
pub fn trim_pad(sessions: &[Session], lengths: SequenceLengths) -> PaddedRow {
    let SequenceLengths { l_ses, l_int } = lengths;
    let n = l_ses * l_int;
    let mut row = PaddedRow {
        lengths,
        question: vec![0; n],
        skill: vec![0; n],
        occurrence: vec![0; n],
        answer: vec![0; n],
        session_start: vec![0; l_ses],
        interaction_mask: vec![false; n],
        session_mask: vec![false; l_ses],
    };
    let kept = &sessions[sessions.len().saturating_sub(l_ses)..];
    let first_slot = l_ses - kept.len();
    for (k, s) in kept.iter().enumerate() {
        let slot = first_slot + k;
        row.session_mask[slot] = true;
        row.session_start[slot] = s.start_time;
        let ints = &s.interactions[s.len().saturating_sub(l_int)..];
        let first_pos = l_int - ints.len();
        for (j, r) in ints.iter().enumerate() {
            let i = row.at(slot, first_pos + j);
            row.question[i] = r.question_id;
            row.skill[i] = r.skill_id;
            row.occurrence[i] = r.occurrence;
            row.answer[i] = answer_index(r.correct);
            row.interaction_mask[i] = true;
        }
    }
    row
}

/// A stack of padded rows sharing one shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PaddedBatch {
    pub rows: Vec<PaddedRow>,
}

impl PaddedBatch {
    pub fn from_histories(histories: &[StudentHistory], lengths: SequenceLengths) -> Self {
        PaddedBatch {
            rows: histories.iter().map(|h| trim_pad(&h.sessions, lengths)).collect(),
        }
    }

    /// `[batch, l_ses, l_int]`.
    pub fn shape(&self) -> Option<[usize; 3]> {
        self.rows
            .first()
            .map(|r| [self.rows.len(), r.lengths.l_ses, r.lengths.l_int])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at_hours(hours: &[f64]) -> Vec<InteractionRecord> {
        hours
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let t = (h * 3600.0) as i64;
                InteractionRecord {
                    student_id: "s".into(),
                    question_id: i as u32 + 1,
                    skill_id: 1,
                    start_time: t,
                    end_time: t,
                    correct: (i % 2) as u8,
                    occurrence: 1,
                }
            })
            .collect()
    }

    fn sizes(h: &StudentHistory) -> Vec<usize> {
        h.sessions.iter().map(Session::len).collect()
    }

    #[test]
    fn splits_on_long_gap() {
        let h = split_sessions(&at_hours(&[0.0, 1.0, 12.0]), 10.0).unwrap();
        assert_eq!(sizes(&h), vec![2, 1]);
    }

    #[test]
    fn single_interaction_is_one_session() {
        let h = split_sessions(&at_hours(&[5.0]), 10.0).unwrap();
        assert_eq!(sizes(&h), vec![1]);
    }

    #[test]
    fn gap_of_exactly_threshold_stays_in_session() {
        let h = split_sessions(&at_hours(&[0.0, 10.0]), 10.0).unwrap();
        assert_eq!(sizes(&h), vec![2]);
    }

    #[test]
    fn fractional_threshold_tie_stays_in_session() {
        // 65 minutes: 65.0 / 60.0 * 3600.0 rounds below 3900
        for minutes in [65i64, 123, 130, 245] {
            let mut recs = at_hours(&[0.0, 0.0]);
            recs[1].start_time = minutes * 60;
            recs[1].end_time = minutes * 60;
            let h = split_sessions(&recs, minutes as f64 / 60.0).unwrap();
            assert_eq!(sizes(&h), vec![2], "{minutes} minutes");
        }
    }

    #[test]
    fn gap_counts_from_previous_end() {
        let mut recs = at_hours(&[0.0, 12.0]);
        recs[0].end_time = 3 * 3600;
        assert_eq!(sizes(&split_sessions(&recs, 10.0).unwrap()), vec![2]);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        assert!(matches!(
            split_sessions(&at_hours(&[3.0, 1.0]), 10.0),
            Err(Error::Unsorted(_))
        ));
        assert!(split_sessions(&at_hours(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn empty_input_gives_no_sessions() {
        assert!(split_sessions(&[], 10.0).unwrap().sessions.is_empty());
    }

    #[test]
    fn power_of_two_rounding() {
        assert_eq!(nearest_power_of_two(14.0), 16);
        assert_eq!(nearest_power_of_two(16.0), 16);
        assert_eq!(nearest_power_of_two(48.0), 64);
        assert_eq!(nearest_power_of_two(47.9), 32);
        assert_eq!(nearest_power_of_two(0.5), 1);
        assert_eq!(nearest_power_of_two(3.0), 4);
        assert_eq!(nearest_power_of_two(5.0), 4);
    }

    #[test]
    fn quartile_interpolates() {
        assert_eq!(third_quartile(&[1, 2, 3, 4, 5]), Some(4.0));
        assert_eq!(third_quartile(&[10, 20]), Some(17.5));
        assert_eq!(third_quartile(&[]), None);
    }

    #[test]
    fn seq_lengths_reject_empty_corpus() {
        assert!(matches!(compute_seq_lengths(&[]), Err(Error::EmptyCorpus)));
    }

    fn history(n_sessions: usize, per_session: usize) -> Vec<Session> {
        (0..n_sessions)
            .map(|s| {
                let hours: Vec<f64> = (0..per_session).map(|t| s as f64 * 100.0 + t as f64 * 0.01).collect();
                let mut recs = at_hours(&hours);
                for (t, r) in recs.iter_mut().enumerate() {
                    r.question_id = (s * 1000 + t + 1) as u32;
                }
                Session::new(recs)
            })
            .collect()
    }

    #[test]
    fn trims_earliest_sessions() {
        let sessions = history(20, 2);
        let row = trim_pad(&sessions, SequenceLengths::new(16, 2).unwrap());
        assert!(row.session_mask.iter().all(|&m| m));
        // slot 0 holds the 5th session (index 4)
        assert_eq!(row.question[row.at(0, 0)], 4001);
        assert_eq!(row.question[row.at(15, 1)], 19002);
    }

    #[test]
    fn left_pads_short_histories() {
        let sessions = history(3, 2);
        let row = trim_pad(&sessions, SequenceLengths::new(16, 2).unwrap());
        assert_eq!(row.real_sessions(), vec![13, 14, 15]);
        for s in 0..13 {
            assert_eq!(row.real_positions(s), Vec::<usize>::new());
            assert_eq!(row.question[row.at(s, 0)], 0);
        }
    }

    #[test]
    fn keeps_most_recent_interactions() {
        let sessions = history(1, 100);
        let row = trim_pad(&sessions, SequenceLengths::new(1, 64).unwrap());
        assert_eq!(row.real_positions(0).len(), 64);
        assert_eq!(row.question[row.at(0, 0)], 37);
        assert_eq!(row.question[row.at(0, 63)], 100);
    }

    #[test]
    fn short_sessions_are_right_aligned() {
        let sessions = history(1, 3);
        let row = trim_pad(&sessions, SequenceLengths::new(2, 4).unwrap());
        assert_eq!(row.real_positions(1), vec![1, 2, 3]);
        assert_eq!(row.labels(1), vec![0, 1, 0]);
        assert_eq!(row.answer[row.at(1, 0)], 0);
    }
}
