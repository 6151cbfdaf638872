//! TREC qrels and run files.
//!
//! Qrels lines: `qid iter docid grade`. Run lines: `qid Q0 docid rank score tag`
//! with 1-based ranks. Blank lines and lines starting with `#` are skipped, so
//! run files may carry a comment header.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::domain::{RankedCandidateList, RankedEntry};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line_no}: malformed line: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("query `{query_id}`: rank of document `{doc_id}` is inconsistent with its position")]
    InconsistentRank { query_id: String, doc_id: String },
    #[error("query `{query_id}`: document `{doc_id}` appears twice")]
    DuplicateDoc { query_id: String, doc_id: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Graded relevance judgments. Absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QrelsTable {
    grades: HashMap<String, HashMap<String, u32>>,
}

impl QrelsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.grades
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// Grades of every judged document for `query_id`, in no particular order.
    pub fn judged_grades(&self, query_id: &str) -> Vec<u32> {
        self.grades
            .get(query_id)
            .map(|docs| docs.values().copied().collect())
            .unwrap_or_default()
    }

    pub fn has_relevant(&self, query_id: &str) -> bool {
        self.grades
            .get(query_id)
            .is_some_and(|docs| docs.values().any(|&g| g > 0))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }
}

/// Ranked output for many queries, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub tag: String,
    pub lists: Vec<RankedCandidateList>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            lists: Vec::new(),
        }
    }

    pub fn get(&self, query_id: &str) -> Option<&RankedCandidateList> {
        self.lists.iter().find(|l| l.query_id == query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.lists.iter().map(|l| l.query_id.as_str())
    }

    /// Adds a list whose order is encoded as descending scores `n, n-1, …, 1`.
    pub fn push_with_rank_scores(&mut self, list: &RankedCandidateList) {
        let n = list.len();
        let entries = list
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| RankedEntry::scored(e.doc_id.clone(), (n - i) as f64))
            .collect();
        self.lists
            .push(RankedCandidateList::new(list.query_id.clone(), entries));
    }
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = io::Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| line.map(|l| (i + 1, l)))
        .filter(|r| match r {
            Ok((_, l)) => {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        })
}

fn malformed(line_no: usize, reason: impl Into<String>) -> ParseError {
    ParseError::MalformedLine {
        line_no,
        reason: reason.into(),
    }
}

pub fn parse_qrels<R: BufRead>(reader: R) -> Result<QrelsTable, ParseError> {
    let mut table = QrelsTable::new();
    for line in content_lines(reader) {
        let (line_no, line) = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, docid, grade] = fields[..] else {
            return Err(malformed(
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        };
        let grade: u32 = grade.parse().map_err(|_| {
            malformed(
                line_no,
                format!("grade `{grade}` is not a non-negative integer"),
            )
        })?;
        table.insert(qid, docid, grade);
    }
    Ok(table)
}

pub fn parse_run<R: BufRead>(reader: R) -> Result<RunFile, ParseError> {
    struct Cursor {
        list: usize,
        last_rank: u64,
        last_score: f64,
    }
    let mut run = RunFile::new("");
    let mut cursors: HashMap<String, Cursor> = HashMap::new();
    for line in content_lines(reader) {
        let (line_no, line) = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, docid, rank, score, tag] = fields[..] else {
            return Err(malformed(
                line_no,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        };
        let rank: u64 = rank
            .parse()
            .map_err(|_| malformed(line_no, format!("rank `{rank}` is not an integer")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| malformed(line_no, format!("score `{score}` is not a number")))?;
        if !score.is_finite() {
            return Err(malformed(line_no, "score is not finite"));
        }
        if run.tag.is_empty() {
            run.tag = tag.to_string();
        }
        let inconsistent = || ParseError::InconsistentRank {
            query_id: qid.to_string(),
            doc_id: docid.to_string(),
        };
        match cursors.get_mut(qid) {
            Some(cursor) => {
                if rank <= cursor.last_rank || score > cursor.last_score {
                    return Err(inconsistent());
                }
                let list = &mut run.lists[cursor.list];
                if list.doc_ids().any(|d| d == docid) {
                    return Err(ParseError::DuplicateDoc {
                        query_id: qid.to_string(),
                        doc_id: docid.to_string(),
                    });
                }
                list.entries.push(RankedEntry::scored(docid, score));
                cursor.last_rank = rank;
                cursor.last_score = score;
            }
            None => {
                cursors.insert(
                    qid.to_string(),
                    Cursor {
                        list: run.lists.len(),
                        last_rank: rank,
                        last_score: score,
                    },
                );
                run.lists.push(RankedCandidateList::new(
                    qid,
                    vec![RankedEntry::scored(docid, score)],
                ));
            }
        }
    }
    Ok(run)
}

/// Writes `run` with 1-based ranks and six-decimal scores. Entries without a
/// score get rank-derived scores `n - i`. `header` lines are emitted first as
/// `# ` comments.
pub fn write_run<W: Write>(run: &RunFile, header: &[String], mut out: W) -> io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let tag = if run.tag.is_empty() { "run" } else { &run.tag };
    for list in &run.lists {
        let n = list.len();
        for (i, entry) in list.entries.iter().enumerate() {
            let score = entry.baseline_score.unwrap_or((n - i) as f64);
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                list.query_id,
                entry.doc_id,
                i + 1,
                score,
                tag
            )?;
        }
    }
    out.flush()
}
