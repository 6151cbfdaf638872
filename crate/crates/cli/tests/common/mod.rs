//! File fixtures shared by the integration suites.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use car_core::backend::{EntailmentSpec, ScriptFile, ScriptedSamples};

pub const K: usize = 10;
pub const QUERIES: usize = 10;
pub const DOCS_PER_QUERY: usize = 10;
pub const QUERY_HITS: usize = 3;
/// Agreeing answers scripted for the noise document: c_q + m/2 at k = 10.
pub const NOISE_HITS: usize = 4;

pub struct Fixture {
    pub queries: PathBuf,
    pub corpus: PathBuf,
    pub run: PathBuf,
    pub qrels: PathBuf,
    pub script: PathBuf,
    pub config: PathBuf,
}

pub fn doc_id(query: usize, doc: usize) -> String {
    format!("q{query}-d{doc}")
}

pub fn relevant_count(query: usize) -> usize {
    3 + query % 5
}

/// Document of query 0 scripted to the borderline confidence when noise is on.
pub fn noise_doc() -> String {
    doc_id(0, DOCS_PER_QUERY - 1)
}

/// `hits` copies of one answer, the rest distinct.
pub fn answers(hits: usize, tag: &str) -> Vec<String> {
    (0..K)
        .map(|i| {
            if i < hits {
                format!("{tag} agreed")
            } else {
                format!("{tag} other {i}")
            }
        })
        .collect()
}

/// Ten queries with ten documents each. Documents `d0..d{r}` are relevant
/// (grade 1) and answered unanimously; the rest are answered with ten
/// distinct strings. Query-only answers agree 3 times out of 10. The baseline
/// run lists every query's documents in reverse, so relevant ones come last.
pub fn write_designed_fixture(dir: &Path, noise: bool) -> Fixture {
    let mut queries = String::new();
    let mut corpus = String::new();
    let mut run = String::new();
    let mut qrels = String::new();
    let mut samples = Vec::new();
    for q in 0..QUERIES {
        let qid = format!("q{q}");
        writeln!(queries, "{qid}\twhat is fact number {q}?").unwrap();
        samples.push(ScriptedSamples {
            query_id: qid.clone(),
            doc_id: None,
            answers: answers(QUERY_HITS, &qid),
        });
        for d in 0..DOCS_PER_QUERY {
            let did = doc_id(q, d);
            let relevant = d < relevant_count(q);
            writeln!(corpus, "{did}\tpassage {d} for query {q}").unwrap();
            writeln!(qrels, "{qid} 0 {did} {}", u32::from(relevant)).unwrap();
            let hits = if relevant {
                K
            } else if noise && did == noise_doc() {
                NOISE_HITS
            } else {
                1
            };
            samples.push(ScriptedSamples {
                query_id: qid.clone(),
                doc_id: Some(did.clone()),
                answers: answers(hits, &did),
            });
        }
        for (rank, d) in (0..DOCS_PER_QUERY).rev().enumerate() {
            let score = (DOCS_PER_QUERY - rank) as f64;
            writeln!(run, "{qid} Q0 {} {} {score} bm25", doc_id(q, d), rank + 1).unwrap();
        }
    }
    let script = ScriptFile {
        model: Some("scripted-fixture".into()),
        samples,
        entailment: EntailmentSpec::Equality,
    };
    let fixture = Fixture {
        queries: dir.join("queries.tsv"),
        corpus: dir.join("corpus.tsv"),
        run: dir.join("baseline.run"),
        qrels: dir.join("qrels.txt"),
        script: dir.join("script.json"),
        config: dir.join("car.conf"),
    };
    std::fs::write(&fixture.queries, queries).unwrap();
    std::fs::write(&fixture.corpus, corpus).unwrap();
    std::fs::write(&fixture.run, run).unwrap();
    std::fs::write(&fixture.qrels, qrels).unwrap();
    std::fs::write(
        &fixture.script,
        serde_json::to_string_pretty(&script).unwrap(),
    )
    .unwrap();
    std::fs::write(
        &fixture.config,
        format!(
            "# designed fixture\nk={K}\nqt=0.8\ncm=0.2\ntop_n={DOCS_PER_QUERY}\nbackend=scripted\nscript={}\n",
            fixture.script.display()
        ),
    )
    .unwrap();
    fixture
}

/// NDCG@k computed from scratch: exponential gain, log2 discount, ideal
/// ordering from sorting the judged grades.
pub fn reference_ndcg(ranked_grades: &[u32], judged_grades: &[u32], k: usize) -> f64 {
    let dcg = |grades: &[u32]| -> f64 {
        grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = judged_grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    dcg(ranked_grades) / dcg(&ideal)
}

/// Mean baseline NDCG@k of the designed fixture, from the reference formula.
pub fn designed_baseline_ndcg(k: usize) -> f64 {
    (0..QUERIES)
        .map(|q| {
            let r = relevant_count(q);
            let judged: Vec<u32> = (0..DOCS_PER_QUERY).map(|d| u32::from(d < r)).collect();
            let ranked: Vec<u32> = (0..DOCS_PER_QUERY)
                .rev()
                .map(|d| u32::from(d < r))
                .collect();
            reference_ndcg(&ranked, &judged, k)
        })
        .sum::<f64>()
        / QUERIES as f64
}
