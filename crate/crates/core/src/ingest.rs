//! Raw log parsing, row filters, vocabulary construction, occurrence
//! counting and dataset statistics.
//!
//! The pipeline is `parse_log -> filter_records -> build_vocab ->
//! annotate_occurrences`, wrapped by [`ingest_file`]. Logs are delimited text
//! with a header row; a [`Schema`] maps the required fields onto whatever
//! column names a particular dataset uses.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::datamodel::{InteractionRecord, StudentHistory, Vocab};
use crate::error::{Error, Result};
use crate::kv;

/// Rows whose time spent exceeds this many seconds are dropped.
pub const MAX_DURATION_SECONDS: i64 = 9999;

/// Maps logical fields onto column names of a delimited log file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub student: String,
    pub question: String,
    pub skill: String,
    pub start: String,
    pub end: TimeSpent,
    pub correct: String,
    pub delimiter: u8,
    /// When set, a skill cell holding several skills keeps only the first.
    pub skill_separator: Option<char>,
}

/// Where a row's end time comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeSpent {
    /// Column with an absolute end timestamp.
    End(String),
    /// Column with elapsed seconds; end = start + elapsed.
    Elapsed(String),
}

impl Schema {
    /// Column names used by the ASSISTments 2017 release.
    pub fn assistments2017() -> Self {
        Schema {
            student: "studentId".into(),
            question: "problemId".into(),
            skill: "skill".into(),
            start: "startTime".into(),
            end: TimeSpent::End("endTime".into()),
            correct: "correct".into(),
            delimiter: b',',
            skill_separator: None,
        }
    }

    /// Parses a schema file of `key = value` lines.
    ///
    /// Required keys: `student`, `question`, `skill`, `start`, `correct` and
    /// exactly one of `end` / `elapsed`. Optional: `delimiter` (a single
    /// character or `tab`), `skill_separator`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: HashMap<String, String> = HashMap::new();
        for e in kv::parse(text).map_err(|e| Error::Schema(e.to_string()))? {
            match e.key.as_str() {
                "student" | "question" | "skill" | "start" | "end" | "elapsed" | "correct"
                | "delimiter" | "skill_separator" => {
                    fields.insert(e.key, e.value);
                }
                other => return Err(Error::Schema(format!("unknown schema key `{other}`"))),
            }
        }
        let take = |k: &str, f: &mut HashMap<String, String>| {
            f.remove(k)
                .ok_or_else(|| Error::Schema(format!("missing schema key `{k}`")))
        };
        let end = match (fields.remove("end"), fields.remove("elapsed")) {
            (Some(e), None) => TimeSpent::End(e),
            (None, Some(e)) => TimeSpent::Elapsed(e),
            (Some(_), Some(_)) => {
                return Err(Error::Schema("give either `end` or `elapsed`, not both".into()))
            }
            (None, None) => return Err(Error::Schema("missing schema key `end` or `elapsed`".into())),
        };
        let delimiter = match fields.remove("delimiter").as_deref() {
            None => b',',
            Some("tab") | Some("\\t") => b'\t',
            Some(d) if d.len() == 1 => d.as_bytes()[0],
            Some(d) => return Err(Error::Schema(format!("delimiter must be one byte, got `{d}`"))),
        };
        let skill_separator = match fields.remove("skill_separator") {
            None => None,
            Some(s) => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some(c),
                    _ => return Err(Error::Schema(format!("skill_separator must be one character, got `{s}`"))),
                }
            }
        };
        Ok(Schema {
            student: take("student", &mut fields)?,
            question: take("question", &mut fields)?,
            skill: take("skill", &mut fields)?,
            start: take("start", &mut fields)?,
            end,
            correct: take("correct", &mut fields)?,
            delimiter,
            skill_separator,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// A parsed row before filtering and id densification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub student: String,
    pub question: String,
    /// `None` when the skill cell is empty or a null marker.
    pub skill: Option<String>,
    pub start_time: i64,
    pub end_time: i64,
    pub correct: u8,
}

impl RawRecord {
    pub fn duration(&self) -> i64 {
        self.end_time - self.start_time
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutput {
    pub records: Vec<RawRecord>,
    /// Data rows seen, well-formed or not.
    pub rows: u64,
    pub malformed: u64,
    /// Rows whose skill cell listed several skills; the first was kept.
    pub multi_skill: u64,
}

fn is_null(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("null") || t.eq_ignore_ascii_case("nan") || t == "NA"
}

fn parse_time(s: &str) -> Option<i64> {
    let t = s.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = t.parse().ok()?;
    f.is_finite().then(|| f.floor() as i64)
}

fn parse_correct(s: &str) -> Option<u8> {
    match s.trim() {
        "0" | "0.0" => Some(0),
        "1" | "1.0" => Some(1),
        _ => None,
    }
}

/// Reads a delimited log file. Malformed rows are counted, not fatal.
pub fn parse_log(path: &Path, schema: &Schema) -> Result<ParseOutput> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, schema)
}

pub fn parse_reader<R: std::io::Read>(reader: R, schema: &Schema) -> Result<ParseOutput> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let c_student = col(&schema.student)?;
    let c_question = col(&schema.question)?;
    let c_skill = col(&schema.skill)?;
    let c_start = col(&schema.start)?;
    let c_end = match &schema.end {
        TimeSpent::End(n) | TimeSpent::Elapsed(n) => col(n)?,
    };
    let c_correct = col(&schema.correct)?;

    let mut out = ParseOutput::default();
    for row in rdr.records() {
        out.rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                out.malformed += 1;
                continue;
            }
        };
        let parsed = (|| {
            let student = row.get(c_student)?.trim();
            let question = row.get(c_question)?.trim();
            if student.is_empty() || question.is_empty() {
                return None;
            }
            let start = parse_time(row.get(c_start)?)?;
            let end_raw = parse_time(row.get(c_end)?)?;
            let end = match schema.end {
                TimeSpent::End(_) => end_raw,
                TimeSpent::Elapsed(_) => start.checked_add(end_raw)?,
            };
            if end < start {
                return None;
            }
            let correct = parse_correct(row.get(c_correct)?)?;
            let skill_cell = row.get(c_skill)?;
            let mut multi = false;
            let skill = if is_null(skill_cell) {
                None
            } else {
                let cell = skill_cell.trim();
                match schema.skill_separator {
                    Some(sep) if cell.contains(sep) => {
                        multi = true;
                        cell.split(sep).map(str::trim).find(|s| !s.is_empty()).map(String::from)
                    }
                    _ => Some(cell.to_string()),
                }
            };
            Some((
                RawRecord {
                    student: student.to_string(),
                    question: question.to_string(),
                    skill,
                    start_time: start,
                    end_time: end,
                    correct,
                },
                multi,
            ))
        })();
        match parsed {
            Some((r, multi)) => {
                out.multi_skill += multi as u64;
                out.records.push(r);
            }
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

/// Per-reason counts of rows removed by [`filter_records`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterCounts {
    pub null_skill: u64,
    pub too_long: u64,
}

/// Drops rows without a skill and rows that took more than
/// [`MAX_DURATION_SECONDS`]. Order is preserved.
pub fn filter_records(records: Vec<RawRecord>) -> (Vec<RawRecord>, FilterCounts) {
    let mut counts = FilterCounts::default();
    let kept = records
        .into_iter()
        .filter(|r| {
            if r.skill.is_none() {
                counts.null_skill += 1;
                false
            } else if r.duration() > MAX_DURATION_SECONDS {
                counts.too_long += 1;
                false
            } else {
                true
            }
        })
        .collect();
    (kept, counts)
}

/// Assigns dense ids in order of first appearance. Rows without a skill
/// contribute only their question.
pub fn build_vocab(records: &[RawRecord]) -> Vocab {
    let mut vocab = Vocab::default();
    for r in records {
        vocab.questions.intern(&r.question);
        if let Some(s) = &r.skill {
            vocab.skills.intern(s);
        }
    }
    vocab
}

/// Sets `occurrence` to the per-student running count of each question.
///
/// Input must be grouped by student with each student's rows in
/// nondecreasing start time.
pub fn annotate_occurrences(mut records: Vec<InteractionRecord>) -> Result<Vec<InteractionRecord>> {
    let mut finished: HashSet<String> = HashSet::new();
    let mut counts: HashMap<u32, u32> = HashMap::new();
    let mut prev: Option<(String, i64)> = None;
    for (i, r) in records.iter_mut().enumerate() {
        match &prev {
            Some((student, start)) if *student == r.student_id => {
                if r.start_time < *start {
                    return Err(Error::Unsorted(format!(
                        "row {i}: student {} goes back in time",
                        r.student_id
                    )));
                }
            }
            Some((student, _)) => {
                finished.insert(student.clone());
                if finished.contains(&r.student_id) {
                    return Err(Error::Unsorted(format!(
                        "row {i}: student {} is not contiguous",
                        r.student_id
                    )));
                }
                counts.clear();
            }
            None => {}
        }
        let c = counts.entry(r.question_id).or_insert(0);
        *c += 1;
        r.occurrence = *c;
        prev = Some((r.student_id.clone(), r.start_time));
    }
    Ok(records)
}

/// Result of the full ingest pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    /// Sorted by (student id, start time), occurrences annotated.
    pub records: Vec<InteractionRecord>,
    pub vocab: Vocab,
    pub drops: DropCounts,
}

/// Row accounting across parse and filter stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounts {
    pub parsed: u64,
    pub malformed: u64,
    pub null_skill: u64,
    pub too_long: u64,
    pub multi_skill_truncated: u64,
}

impl DropCounts {
    pub fn dropped(&self) -> u64 {
        self.malformed + self.null_skill + self.too_long
    }
}

/// Filters, densifies, sorts and annotates parsed rows.
pub fn build_corpus(parsed: ParseOutput) -> Result<Corpus> {
    let (kept, fc) = filter_records(parsed.records);
    let vocab = build_vocab(&kept);
    let mut records: Vec<InteractionRecord> = kept
        .into_iter()
        .map(|r| {
            let skill = r.skill.as_deref().expect("filtered");
            InteractionRecord {
                question_id: vocab.questions.get(&r.question).expect("interned"),
                skill_id: vocab.skills.get(skill).expect("interned"),
                student_id: r.student,
                start_time: r.start_time,
                end_time: r.end_time,
                correct: r.correct,
                occurrence: 1,
            }
        })
        .collect();
    // Stable: equal timestamps keep file order.
    records.sort_by(|a, b| {
        a.student_id
            .cmp(&b.student_id)
            .then(a.start_time.cmp(&b.start_time))
    });
    let records = annotate_occurrences(records)?;
    Ok(Corpus {
        records,
        vocab,
        drops: DropCounts {
            parsed: parsed.rows,
            malformed: parsed.malformed,
            null_skill: fc.null_skill,
            too_long: fc.too_long,
            multi_skill_truncated: parsed.multi_skill,
        },
    })
}

pub fn ingest_file(path: &Path, schema: &Schema) -> Result<Corpus> {
    build_corpus(parse_log(path, schema)?)
}

/// Exact nonnegative rational, kept so that averages are only rounded for
/// display.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio { num: 0, den: 1 }
        } else {
            Ratio { num, den }
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Nearest integer, halves rounded up.
    pub fn round(self) -> u64 {
        (2 * self.num + self.den) / (2 * self.den)
    }
}

/// Dataset statistics after segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsReport {
    pub interactions: u64,
    pub students: u64,
    pub questions: u64,
    pub skills: u64,
    pub sessions: u64,
    pub avg_sessions_per_student: Ratio,
    pub avg_interactions_per_session: Ratio,
    pub median_interactions_per_session: Ratio,
    pub drops: DropCounts,
}

/// Computes the dataset statistics table from segmented histories.
pub fn dataset_stats(histories: &[StudentHistory]) -> StatsReport {
    let mut questions = HashSet::new();
    let mut skills = HashSet::new();
    let mut lengths: Vec<u64> = Vec::new();
    for h in histories {
        for s in &h.sessions {
            lengths.push(s.len() as u64);
            for r in &s.interactions {
                questions.insert(r.question_id);
                skills.insert(r.skill_id);
            }
        }
    }
    let interactions: u64 = lengths.iter().sum();
    let sessions = lengths.len() as u64;
    lengths.sort_unstable();
    let median = match lengths.len() {
        0 => Ratio::new(0, 1),
        n if n % 2 == 1 => Ratio::new(lengths[n / 2], 1),
        n => Ratio::new(lengths[n / 2 - 1] + lengths[n / 2], 2),
    };
    StatsReport {
        interactions,
        students: histories.len() as u64,
        questions: questions.len() as u64,
        skills: skills.len() as u64,
        sessions,
        avg_sessions_per_student: Ratio::new(sessions, histories.len() as u64),
        avg_interactions_per_session: Ratio::new(interactions, sessions),
        median_interactions_per_session: median,
        drops: DropCounts::default(),
    }
}

impl StatsReport {
    pub fn with_drops(mut self, drops: DropCounts) -> Self {
        self.drops = drops;
        self
    }

    /// One `key: value` line per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        line("interactions", self.interactions.to_string());
        line("students", self.students.to_string());
        line("questions", self.questions.to_string());
        line("skills", self.skills.to_string());
        line("sessions", self.sessions.to_string());
        line("avg_sessions_per_student", self.avg_sessions_per_student.round().to_string());
        line("avg_interactions_per_session", self.avg_interactions_per_session.round().to_string());
        line(
            "median_interactions_per_session",
            self.median_interactions_per_session.round().to_string(),
        );
        line("avg_sessions_per_student_exact", format!("{:.6}", self.avg_sessions_per_student.to_f64()));
        line(
            "avg_interactions_per_session_exact",
            format!("{:.6}", self.avg_interactions_per_session.to_f64()),
        );
        line(
            "median_interactions_per_session_exact",
            format!("{:.6}", self.median_interactions_per_session.to_f64()),
        );
        line("rows_parsed", self.drops.parsed.to_string());
        line("rows_kept", self.drops.parsed.saturating_sub(self.drops.dropped()).to_string());
        line("dropped_malformed", self.drops.malformed.to_string());
        line("dropped_null_skill", self.drops.null_skill.to_string());
        line("dropped_too_long", self.drops.too_long.to_string());
        line("multi_skill_truncated", self.drops.multi_skill_truncated.to_string());
        s
    }
}
