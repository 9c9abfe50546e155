//! Binary containers for ingested records (`HTSK`) and segmented data (`HTSS`).
//!
//! Integers are little-endian. A record container is
//!
//! ```text
//! "HTSK" u16 version u64 count
//! count × { u32 student, u32 question, u32 skill, i64 start, i64 end, u8 correct, u32 occurrence }
//! string table of student ids, of raw question ids, of raw skill ids
//! 5 × u64 drop counts: parsed, malformed, null_skill, too_long, multi_skill_truncated
//! ```
//!
//! where a string table is a u32 count followed by u32-length-prefixed UTF-8
//! strings and `student` indexes the student table. A segmented container is
//!
//! ```text
//! "HTSS" u16 version f64 gap_hours u32 l_ses u32 l_int
//! u64 length, then a record container
//! per student in record order: u32 session count, then u32 length per session
//! ```

use std::path::Path;

use crate::datamodel::{IdMap, InteractionRecord, Session, StudentHistory, Vocab};
use crate::error::{Error, Result};
use crate::ingest::{Corpus, DropCounts};
use crate::model::ModelShape;
use crate::segmentation::{compute_seq_lengths, split_corpus, SequenceLengths};

pub const RECORDS_MAGIC: &[u8; 4] = b"HTSK";
pub const SEGMENTED_MAGIC: &[u8; 4] = b"HTSS";
pub const VERSION: u16 = 1;

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) struct Reader<'a> {
    b: &'a [u8],
    at: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(b: &'a [u8], what: &'static str) -> Self {
        Reader { b, at: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| Error::Format(format!("truncated {}", self.what)))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("non-UTF-8 string in {}", self.what)))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.at != self.b.len() {
            return Err(Error::Format(format!("{} trailing bytes in {}", self.b.len() - self.at, self.what)));
        }
        Ok(())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("not a {} (bad magic)", self.what)));
        }
        let v = u16::from_le_bytes(self.array()?);
        if v != VERSION {
            return Err(Error::Format(format!("{} version {v}, expected {VERSION}", self.what)));
        }
        Ok(())
    }
}

fn put_strings(b: &mut Vec<u8>, xs: &[String]) {
    b.extend_from_slice(&(xs.len() as u32).to_le_bytes());
    for s in xs {
        b.extend_from_slice(&(s.len() as u32).to_le_bytes());
        b.extend_from_slice(s.as_bytes());
    }
}

fn get_strings(r: &mut Reader) -> Result<Vec<String>> {
    let n = r.u32()? as usize;
    (0..n).map(|_| r.string()).collect()
}

pub fn encode_corpus(c: &Corpus) -> Vec<u8> {
    let mut students: Vec<String> = Vec::new();
    let mut b = Vec::with_capacity(14 + 33 * c.records.len());
    b.extend_from_slice(RECORDS_MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(c.records.len() as u64).to_le_bytes());
    for r in &c.records {
        // records are grouped by student, so a new id only ever follows the last
        if students.last() != Some(&r.student_id) {
            students.push(r.student_id.clone());
        }
        b.extend_from_slice(&(students.len() as u32 - 1).to_le_bytes());
        b.extend_from_slice(&r.question_id.to_le_bytes());
        b.extend_from_slice(&r.skill_id.to_le_bytes());
        b.extend_from_slice(&r.start_time.to_le_bytes());
        b.extend_from_slice(&r.end_time.to_le_bytes());
        b.push(r.correct);
        b.extend_from_slice(&r.occurrence.to_le_bytes());
    }
    put_strings(&mut b, &students);
    put_strings(&mut b, c.vocab.questions.raw_ids());
    put_strings(&mut b, c.vocab.skills.raw_ids());
    let d = &c.drops;
    for v in [d.parsed, d.malformed, d.null_skill, d.too_long, d.multi_skill_truncated] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn decode_corpus_from(r: &mut Reader) -> Result<Corpus> {
    r.header(RECORDS_MAGIC)?;
    let n = r.u64()? as usize;
    let mut raw = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let student = r.u32()?;
        let question_id = r.u32()?;
        let skill_id = r.u32()?;
        let start_time = i64::from_le_bytes(r.array()?);
        let end_time = i64::from_le_bytes(r.array()?);
        let correct = r.take(1)?[0];
        let occurrence = r.u32()?;
        raw.push((student, question_id, skill_id, start_time, end_time, correct, occurrence));
    }
    let students = get_strings(r)?;
    let vocab = Vocab {
        questions: IdMap::from_raw(get_strings(r)?),
        skills: IdMap::from_raw(get_strings(r)?),
    };
    let drops = DropCounts {
        parsed: r.u64()?,
        malformed: r.u64()?,
        null_skill: r.u64()?,
        too_long: r.u64()?,
        multi_skill_truncated: r.u64()?,
    };
    let mut records = Vec::with_capacity(raw.len());
    for (s, q, k, start, end, correct, occurrence) in raw {
        let student_id = students
            .get(s as usize)
            .ok_or_else(|| Error::Format(format!("student index {s} out of range")))?
            .clone();
        if q as usize > vocab.num_questions() || k as usize > vocab.num_skills() || q == 0 || k == 0 {
            return Err(Error::Format(format!("question {q} or skill {k} outside the vocabulary")));
        }
        records.push(InteractionRecord {
            student_id,
            question_id: q,
            skill_id: k,
            start_time: start,
            end_time: end,
            correct,
            occurrence,
        });
    }
    Ok(Corpus { records, vocab, drops })
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus> {
    let mut r = Reader::new(bytes, "record container");
    let c = decode_corpus_from(&mut r)?;
    r.finish()?;
    Ok(c)
}

pub fn save_corpus(path: &Path, c: &Corpus) -> Result<()> {
    write_atomic(path, &encode_corpus(c))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    decode_corpus(&read(path)?)
}

/// Sessions of every student together with the records and lengths they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedData {
    pub corpus: Corpus,
    pub gap_hours: f64,
    pub lengths: SequenceLengths,
    pub histories: Vec<StudentHistory>,
}

impl SegmentedData {
    /// Splits sessions at `gap_hours`; lengths come from the corpus quartiles
    /// unless given.
    pub fn new(corpus: Corpus, gap_hours: f64, lengths: Option<SequenceLengths>) -> Result<Self> {
        let histories = split_corpus(&corpus.records, gap_hours)?;
        let lengths = match lengths {
            Some(l) => l,
            None => compute_seq_lengths(&histories)?,
        };
        Ok(SegmentedData {
            corpus,
            gap_hours,
            lengths,
            histories,
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            num_skills: self.corpus.vocab.num_skills(),
            num_questions: self.corpus.vocab.num_questions(),
            lengths: self.lengths,
        }
    }

    pub fn student(&self, id: &str) -> Result<&StudentHistory> {
        self.histories
            .iter()
            .find(|h| h.student_id == id)
            .ok_or_else(|| Error::UnknownStudent(id.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(SEGMENTED_MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.gap_hours.to_le_bytes());
        b.extend_from_slice(&(self.lengths.l_ses as u32).to_le_bytes());
        b.extend_from_slice(&(self.lengths.l_int as u32).to_le_bytes());
        let inner = encode_corpus(&self.corpus);
        b.extend_from_slice(&(inner.len() as u64).to_le_bytes());
        b.extend_from_slice(&inner);
        for h in &self.histories {
            b.extend_from_slice(&(h.sessions.len() as u32).to_le_bytes());
            for s in &h.sessions {
                b.extend_from_slice(&(s.len() as u32).to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "segmented container");
        r.header(SEGMENTED_MAGIC)?;
        let gap_hours = f64::from_le_bytes(r.array()?);
        let l_ses = r.u32()? as usize;
        let l_int = r.u32()? as usize;
        let lengths = SequenceLengths::new(l_ses, l_int)?;
        let inner_len = r.u64()? as usize;
        let corpus = decode_corpus(r.take(inner_len)?)?;
        let mut histories = Vec::new();
        let mut at = 0;
        let recs = &corpus.records;
        while at < recs.len() {
            let n = r.u32()? as usize;
            let mut sessions = Vec::with_capacity(n);
            for _ in 0..n {
                let len = r.u32()? as usize;
                let end = at + len;
                if len == 0 || end > recs.len() {
                    return Err(Error::Format("session lengths do not match the records".into()));
                }
                sessions.push(Session::new(recs[at..end].to_vec()));
                at = end;
            }
            let first = sessions.first().ok_or_else(|| Error::Format("student without sessions".into()))?;
            let id = first.interactions[0].student_id.clone();
            if sessions.iter().flat_map(|s| &s.interactions).any(|x| x.student_id != id) {
                return Err(Error::Format(format!("sessions of {id} mix students")));
            }
            histories.push(StudentHistory { student_id: id, sessions });
        }
        r.finish()?;
        Ok(SegmentedData {
            corpus,
            gap_hours,
            lengths,
            histories,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SegmentedData::from_bytes(&read(path)?)
    }
}
