//! Chronological per-student session split and the padded windows each
//! split is trained or evaluated on.

use std::ops::Range;

use crate::datamodel::StudentHistory;
use crate::segmentation::{trim_pad, PaddedRow, SequenceLengths};

/// Session index ranges of one student's history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// First 60% of sessions train, next 20% validate, rest test, with cuts at
/// `floor(0.6 n)` and `floor(0.8 n)`.
pub fn split_60_20_20(n: usize) -> SplitRanges {
    let a = 6 * n / 10;
    let b = 8 * n / 10;
    SplitRanges {
        train: 0..a,
        val: a..b,
        test: b..n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Every session, including the first.
    All,
}

impl Split {
    pub fn range(self, n: usize) -> Range<usize> {
        let r = split_60_20_20(n);
        match self {
            Split::Train => r.train,
            Split::Val => r.val,
            Split::Test => r.test,
            Split::All => 0..n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(crate::error::Error::InvalidArgument(format!("unknown split `{s}`"))),
        }
    }
}

/// One padded window of a student's history and the slots predicted in it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Index of the student in the history list.
    pub student: usize,
    pub row: PaddedRow,
    /// Target slots, ascending.
    pub targets: Vec<usize>,
    /// Session index (within the student's history) of each target.
    pub sessions: Vec<usize>,
}

/// Windows predicting the sessions of `targets`. Targets are grouped in runs
/// of `max(1, l_ses / 2)`; each run is predicted from a window holding the
/// run and the sessions before it, up to `l_ses` sessions in total.
pub fn windows(history: &StudentHistory, student: usize, lengths: SequenceLengths, targets: Range<usize>) -> Vec<Sample> {
    let stride = (lengths.l_ses / 2).max(1);
    let mut out = Vec::new();
    let mut g0 = targets.start;
    while g0 < targets.end {
        let g1 = (g0 + stride).min(targets.end);
        let w0 = g1.saturating_sub(lengths.l_ses);
        let row = trim_pad(&history.sessions[w0..g1], lengths);
        let slot = |n: usize| lengths.l_ses + n - g1;
        out.push(Sample {
            student,
            row,
            targets: (g0..g1).map(slot).collect(),
            sessions: (g0..g1).collect(),
        });
        g0 = g1;
    }
    out
}

/// Windows for one split of every student. The first session of a student
/// has no history and is only predicted under [`Split::All`].
pub fn split_samples(histories: &[StudentHistory], lengths: SequenceLengths, split: Split) -> Vec<Sample> {
    let mut out = Vec::new();
    for (i, h) in histories.iter().enumerate() {
        let mut r = split.range(h.sessions.len());
        if split != Split::All {
            r.start = r.start.max(1);
        }
        if r.start < r.end {
            out.extend(windows(h, i, lengths, r));
        }
    }
    out
}

/// Number of students with no predicted session in `split`.
pub fn students_without(histories: &[StudentHistory], split: Split) -> usize {
    histories
        .iter()
        .filter(|h| {
            let r = split.range(h.sessions.len());
            r.start.max(if split == Split::All { 0 } else { 1 }) >= r.end
        })
        .count()
}
