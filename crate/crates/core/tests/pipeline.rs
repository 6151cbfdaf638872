use std::collections::HashMap;

use car_core::backend::{CountingGenerator, InputKey, PromptTemplates, ScriptedBackend};
use car_core::cache::{CachedGenerator, ResponseCache};
use car_core::domain::{BinLabel, CarConfig, DocumentRecord, QueryRecord, RankedCandidateList};
use car_core::engine::rerank_corpus;
use car_core::evaluation::{ndcg_at_k, parse_qrels, parse_run, write_run};

fn answers(hits: usize, tag: &str) -> Vec<String> {
    (0..10)
        .map(|i| {
            if i < hits {
                format!("{tag} answer")
            } else {
                format!("{tag} noise {i}")
            }
        })
        .collect()
}

struct Corpus {
    queries: Vec<QueryRecord>,
    lists: Vec<RankedCandidateList>,
    docs: HashMap<String, DocumentRecord>,
    backend: ScriptedBackend,
}

/// Two queries: `uncertain` (c_q = 0.2) with a helpful third document, and
/// `sure` (c_q = 0.9) which the gate leaves alone.
fn corpus() -> Corpus {
    let queries = vec![
        QueryRecord::new("uncertain", "who painted it?").unwrap(),
        QueryRecord::new("sure", "capital of france?").unwrap(),
    ];
    let lists = vec![
        RankedCandidateList::from_doc_ids("uncertain", ["u1", "u2", "u3", "u4"]),
        RankedCandidateList::from_doc_ids("sure", ["s1", "s2"]),
    ];
    let docs = ["u1", "u2", "u3", "u4", "s1", "s2"]
        .iter()
        .map(|d| {
            (
                d.to_string(),
                DocumentRecord::new(*d, format!("passage {d}")).unwrap(),
            )
        })
        .collect();
    let mut backend = ScriptedBackend::default();
    backend.insert_samples(InputKey::query("uncertain"), answers(2, "q"));
    backend.insert_samples(InputKey::query("sure"), answers(9, "s"));
    for (doc, hits) in [("u1", 1), ("u2", 2), ("u3", 8), ("u4", 3)] {
        backend.insert_samples(InputKey::query_doc("uncertain", doc), answers(hits, doc));
    }
    Corpus {
        queries,
        lists,
        docs,
        backend,
    }
}

#[test]
fn rerank_write_parse_evaluate() {
    let c = corpus();
    let (run, reports) = rerank_corpus(
        &c.queries,
        &c.lists,
        &c.docs,
        &c.backend,
        &CarConfig::default(),
        "car",
    )
    .unwrap();

    let uncertain: Vec<&str> = run.get("uncertain").unwrap().doc_ids().collect();
    assert_eq!(uncertain, vec!["u3", "u1", "u2", "u4"]);
    assert_eq!(
        reports[0]
            .per_doc
            .iter()
            .map(|d| d.label)
            .collect::<Vec<_>>(),
        vec![
            BinLabel::Preserve,
            BinLabel::Preserve,
            BinLabel::Promote,
            BinLabel::Preserve
        ]
    );
    assert!(reports[1].gated);

    let mut bytes = Vec::new();
    write_run(&run, &["k=10".to_string()], &mut bytes).unwrap();
    let parsed = parse_run(bytes.as_slice()).unwrap();
    assert_eq!(parsed, run);

    let qrels = parse_qrels("uncertain 0 u3 1\nsure 0 s1 1\n".as_bytes()).unwrap();
    let before = ndcg_at_k(&parse_run(baseline_text().as_bytes()).unwrap(), &qrels, 5).unwrap();
    let after = ndcg_at_k(&parsed, &qrels, 5).unwrap();
    assert!(after.mean > before.mean);
    assert_eq!(after.value("uncertain"), Some(1.0));
}

fn baseline_text() -> String {
    "uncertain Q0 u1 1 4 bm25\nuncertain Q0 u2 2 3 bm25\nuncertain Q0 u3 3 2 bm25\n\
     uncertain Q0 u4 4 1 bm25\nsure Q0 s1 1 2 bm25\nsure Q0 s2 2 1 bm25\n"
        .to_string()
}

#[test]
fn cached_rerank_replays_without_backend() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let config = CarConfig::default();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let cache = ResponseCache::open(dir.path()).unwrap();
        let counting = CountingGenerator::new(&c.backend);
        let cached = CachedGenerator::new(&counting, &cache, PromptTemplates::default());
        let result = rerank_corpus(&c.queries, &c.lists, &c.docs, &cached, &config, "car").unwrap();
        outputs.push((result, counting.sample_requests(), counting.judge_calls()));
    }
    let (cold, warm) = (&outputs[0], &outputs[1]);
    assert!(cold.1 > 0);
    assert_eq!((warm.1, warm.2), (0, 0));
    assert_eq!(cold.0, warm.0);
}
