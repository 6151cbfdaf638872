//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use car_cli::commands::{rerank, run_sweep, write_rerank_outputs, RerankInputs};
use car_cli::config::Settings;
use car_core::backend::{
    BackendError, CountingGenerator, EntailmentScript, EntailmentVerdict, InputKey, ScriptedBackend,
};
use car_core::clustering::{cluster_greedy, cluster_pairwise};
use car_core::domain::{
    AnswerSample, BinLabel, CarConfig, ClusteringMode, DocumentRecord, QueryRecord,
    RankedCandidateList,
};
use car_core::engine::{rerank_query, stable_bin_sort};
use car_core::evaluation::{ndcg_at_k, relative_improvement, QrelsTable, RunFile};
use car_core::sweep::SweepGrid;
use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

const ALPHABET: &[char] = &['a', 'b', 'c', 'd', 'e', 'f'];

/// Random equivalence relation over a small answer alphabet.
struct ClassJudge {
    class: HashMap<char, usize>,
}

impl ClassJudge {
    fn random(rng: &mut ChaCha8Rng, letters: usize) -> Self {
        let classes = rng.gen_range(1..=letters);
        let class = ALPHABET[..letters]
            .iter()
            .map(|&c| (c, rng.gen_range(0..classes)))
            .collect();
        Self { class }
    }

    /// Equivalence class of a normalized answer; the empty answer is alone.
    fn class_of(&self, answer: &str) -> Option<usize> {
        answer.chars().next().map(|c| self.class[&c])
    }

    fn table(&self) -> EntailmentScript {
        let mut table = HashMap::new();
        for (&p, &cp) in &self.class {
            for (&h, &ch) in &self.class {
                let verdict = if cp == ch {
                    EntailmentVerdict::Entails
                } else {
                    EntailmentVerdict::NotEntails
                };
                table.insert((p.to_string(), h.to_string()), verdict);
            }
        }
        EntailmentScript::Table(table)
    }

    fn verdict(&self, premise: &str, hypothesis: &str) -> EntailmentVerdict {
        if self.class_of(premise) == self.class_of(hypothesis) {
            EntailmentVerdict::Entails
        } else {
            EntailmentVerdict::NotEntails
        }
    }
}

/// Raw answers over the first `letters` of the alphabet, sometimes padded or
/// upper-cased, occasionally empty.
fn random_answers(rng: &mut ChaCha8Rng, k: usize, letters: usize) -> Vec<String> {
    // skew toward one letter so confidences spread over the whole range
    let favourite = ALPHABET[rng.gen_range(0..letters)];
    let bias = rng.gen_range(0.0..1.0);
    (0..k)
        .map(|_| {
            if rng.gen_bool(0.05) {
                return String::new();
            }
            let c = if rng.gen_bool(bias) {
                favourite
            } else {
                ALPHABET[rng.gen_range(0..letters)]
            };
            match rng.gen_range(0..4) {
                0 => format!(" {} ", c.to_ascii_uppercase()),
                _ => c.to_string(),
            }
        })
        .collect()
}

/// Largest class size among normalized answers.
fn largest_class(judge: &ClassJudge, raw: &[String]) -> usize {
    raw.iter()
        .map(|a| judge.class_of(&a.trim().to_lowercase()))
        .counts()
        .into_values()
        .max()
        .unwrap_or(0)
}

struct Instance {
    query: QueryRecord,
    list: RankedCandidateList,
    docs: HashMap<String, DocumentRecord>,
    judge: ClassJudge,
    query_answers: Vec<String>,
    doc_answers: Vec<Vec<String>>,
    k: usize,
    /// Threshold and margin in tenths.
    t: usize,
    m: usize,
    config: CarConfig,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(2..=6);
        let letters = rng.gen_range(1..=ALPHABET.len());
        let judge = ClassJudge::random(rng, letters);
        let mut ids: Vec<String> = (0..n).map(|i| format!("doc{i}")).collect();
        ids.shuffle(rng);
        let query = QueryRecord::new("q", "question").unwrap();
        let docs = ids
            .iter()
            .map(|id| {
                (
                    id.clone(),
                    DocumentRecord::new(id.as_str(), "text").unwrap(),
                )
            })
            .collect();
        let query_answers = random_answers(rng, k, letters);
        let doc_answers = (0..n).map(|_| random_answers(rng, k, letters)).collect();
        let t = rng.gen_range(0..=10);
        let m = rng.gen_range(0..=10);
        let config = CarConfig {
            k,
            query_threshold: t as f64 / 10.0,
            confidence_margin: m as f64 / 10.0,
            top_n: rng.gen_range(1..=n + 2),
            clustering_mode: if rng.gen_bool(0.5) {
                ClusteringMode::Greedy
            } else {
                ClusteringMode::Pairwise
            },
            disable_qt: rng.gen_bool(0.15),
            disable_cm: rng.gen_bool(0.15),
            pairwise_short_circuit: rng.gen_bool(0.5),
            ..CarConfig::default()
        };
        Self {
            query,
            list: RankedCandidateList::from_doc_ids("q", ids),
            docs,
            judge,
            query_answers,
            doc_answers,
            k,
            t,
            m,
            config,
        }
    }

    fn backend(&self) -> ScriptedBackend {
        let mut samples = HashMap::new();
        samples.insert(InputKey::query("q"), self.query_answers.clone());
        for (id, answers) in self.list.doc_ids().zip(&self.doc_answers) {
            samples.insert(InputKey::query_doc("q", id), answers.clone());
        }
        ScriptedBackend::new(samples, self.judge.table())
    }

    fn query_hits(&self) -> usize {
        largest_class(&self.judge, &self.query_answers)
    }

    /// Reference ranking in exact integer arithmetic: confidences are
    /// `hits / k` and the grid values are `tenths / 10`.
    fn reference(&self) -> (Vec<String>, Vec<i8>) {
        let ids: Vec<String> = self.list.doc_ids().map(str::to_string).collect();
        let k = self.k as i64;
        let cq = self.query_hits() as i64;
        if !self.config.disable_qt && 10 * cq >= self.t as i64 * k {
            return (ids, Vec::new());
        }
        let m = if self.config.disable_cm {
            0
        } else {
            self.m as i64
        };
        let head = self.config.top_n.min(ids.len());
        let signs: Vec<i8> = self.doc_answers[..head]
            .iter()
            .map(|answers| {
                let diff = 10 * (largest_class(&self.judge, answers) as i64 - cq);
                if diff >= m * k {
                    1
                } else if diff <= -m * k {
                    -1
                } else {
                    0
                }
            })
            .collect();
        let mut out = Vec::with_capacity(ids.len());
        for sign in [1, 0, -1] {
            out.extend(
                (0..head)
                    .filter(|&i| signs[i] == sign)
                    .map(|i| ids[i].clone()),
            );
        }
        out.extend(ids[head..].iter().cloned());
        (out, signs)
    }
}

fn criterion_1_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let cases = 2000;
    let mut corrected = 0;
    for case in 0..cases {
        let inst = Instance::random(&mut rng);
        let backend = inst.backend();
        let (out, report) =
            rerank_query(&inst.query, &inst.list, &inst.docs, &backend, &inst.config)
                .map_err(|e| format!("case {case}: {e}"))?;
        let (expected, signs) = inst.reference();
        let got: Vec<String> = out.doc_ids().map(str::to_string).collect();
        ensure!(
            got == expected,
            "case {case}: got {got:?}, reference {expected:?}"
        );
        let labels: Vec<i8> = report.per_doc.iter().map(|d| d.label.as_sign()).collect();
        ensure!(
            labels == signs,
            "case {case}: labels {labels:?}, reference {signs:?}"
        );
        ensure!(report.failure.is_none(), "case {case}: unexpected failure");
        corrected += usize::from(!signs.is_empty());
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{cases} instances ({corrected} corrected) match the reference in {elapsed:.2?}"
    ))
}

fn criterion_2_gate_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 1000;
    for case in 0..cases {
        let mut inst = Instance::random(&mut rng);
        // choose a threshold the query confidence meets
        let max_t = 10 * inst.query_hits() / inst.k;
        inst.t = rng.gen_range(0..=max_t);
        inst.config.query_threshold = inst.t as f64 / 10.0;
        inst.config.disable_qt = false;
        let backend = inst.backend();
        let counting = CountingGenerator::new(&backend);
        let (out, report) =
            rerank_query(&inst.query, &inst.list, &inst.docs, &counting, &inst.config)
                .map_err(|e| format!("case {case}: {e}"))?;
        ensure!(out == inst.list, "case {case}: gated query was reordered");
        ensure!(
            report.gated && report.per_doc.is_empty(),
            "case {case}: not reported as gated"
        );
        ensure!(
            counting.sample_requests() == 1 && counting.sampled_answers() == inst.k,
            "case {case}: {} sample requests, {} answers",
            counting.sample_requests(),
            counting.sampled_answers()
        );
        ensure!(
            report.sample_call_count == inst.k,
            "case {case}: report counts documents"
        );
    }
    Ok(format!(
        "{cases} gated instances unchanged with zero document sampling"
    ))
}

fn criterion_3_order_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 2000;
    for case in 0..cases {
        let n = rng.gen_range(1..=20);
        let mut ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        ids.shuffle(&mut rng);
        let list = RankedCandidateList::from_doc_ids("q", ids.clone());
        let labels: HashMap<String, BinLabel> = ids
            .iter()
            .map(|id| {
                (
                    id.clone(),
                    BinLabel::from_sign(rng.gen_range(-1..=1)).unwrap(),
                )
            })
            .collect();
        let out = stable_bin_sort(&list, &labels).map_err(|e| e.to_string())?;
        let got: Vec<&str> = out.doc_ids().collect();
        let position: HashMap<&str, usize> = got.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        ensure!(
            got.len() == n && position.len() == n,
            "case {case}: not a permutation"
        );
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let (la, lb) = (labels[a].as_sign(), labels[b].as_sign());
                let a_first = position[a.as_str()] < position[b.as_str()];
                let ok = if la == lb {
                    a_first
                } else {
                    a_first == (la > lb)
                };
                ensure!(ok, "case {case}: {a} ({la}) vs {b} ({lb}) misordered");
            }
        }
    }
    Ok(format!(
        "{cases} random permutations keep baseline order within labels"
    ))
}

fn samples(raw: &[String]) -> Vec<AnswerSample> {
    raw.iter()
        .enumerate()
        .map(|(sample_index, text)| AnswerSample {
            text: text.trim().to_lowercase(),
            sample_index,
        })
        .collect()
}

fn criterion_4_mode_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = 1000;
    for case in 0..cases {
        let k = rng.gen_range(1..=10);
        let letters = rng.gen_range(1..=ALPHABET.len());
        let judge = ClassJudge::random(&mut rng, letters);
        let answers = samples(&random_answers(&mut rng, k, letters));
        let oracle = |p: &str, h: &str| -> Result<EntailmentVerdict, BackendError> {
            Ok(judge.verdict(p, h))
        };
        let greedy = cluster_greedy(&answers, &oracle).map_err(|e| e.to_string())?;
        let pairwise =
            cluster_pairwise(&answers, &oracle, rng.gen_bool(0.5)).map_err(|e| e.to_string())?;
        ensure!(
            greedy.labels() == pairwise.labels(),
            "case {case}: greedy {:?} vs pairwise {:?}",
            greedy.labels(),
            pairwise.labels()
        );
        ensure!(
            greedy.confidence() == pairwise.confidence(),
            "case {case}: confidences differ"
        );
        let expected = largest_class(
            &judge,
            &answers.iter().map(|a| a.text.clone()).collect::<Vec<_>>(),
        );
        ensure!(
            greedy.confidence().value() == expected as f64 / k as f64,
            "case {case}: confidence is not the largest class share"
        );
    }
    Ok(format!(
        "{cases} equivalence-relation instances cluster identically in both modes"
    ))
}

fn criterion_5_call_budgets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cases = 1000;
    let (mut max_pairwise, mut max_greedy) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let k = rng.gen_range(1..=10);
        let letters = rng.gen_range(1..=ALPHABET.len());
        let judge = ClassJudge::random(&mut rng, letters);
        // mix in random judges that are not equivalence relations
        let chaotic = rng.gen_bool(0.3);
        let seed: u64 = rng.gen();
        let answers = samples(&random_answers(&mut rng, k, letters));
        let calls = AtomicUsize::new(0);
        let counted = |p: &str, h: &str| -> Result<EntailmentVerdict, BackendError> {
            calls.fetch_add(1, Ordering::SeqCst);
            if chaotic {
                let bits = p.bytes().chain(h.bytes()).fold(seed, |acc, b| {
                    acc.rotate_left(7) ^ u64::from(b).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                });
                return Ok(if bits % 2 == 0 {
                    EntailmentVerdict::Entails
                } else {
                    EntailmentVerdict::NotEntails
                });
            }
            Ok(judge.verdict(p, h))
        };

        let greedy = cluster_greedy(&answers, &counted).map_err(|e| e.to_string())?;
        let greedy_calls = calls.swap(0, Ordering::SeqCst);
        let r = greedy.cluster_count();
        ensure!(
            greedy_calls <= 2 * k * r,
            "case {case}: greedy {greedy_calls} > 2*{k}*{r}"
        );

        cluster_pairwise(&answers, &counted, rng.gen_bool(0.5)).map_err(|e| e.to_string())?;
        let pairwise_calls = calls.swap(0, Ordering::SeqCst);
        ensure!(
            pairwise_calls <= k * (k - 1),
            "case {case}: pairwise {pairwise_calls} > {k}*{}",
            k - 1
        );
        if k > 1 {
            max_pairwise = max_pairwise.max(pairwise_calls as f64 / (k * (k - 1)) as f64);
        }
        max_greedy = max_greedy.max(greedy_calls as f64 / (2 * k * r) as f64);
    }
    Ok(format!(
        "{cases} instances within budget (peak use: pairwise {:.0}%, greedy {:.0}%)",
        max_pairwise * 100.0,
        max_greedy * 100.0
    ))
}

fn single_run(query: &str, docs: &[String]) -> RunFile {
    let mut run = RunFile::new("t");
    run.push_with_rank_scores(&RankedCandidateList::from_doc_ids(query, docs.to_vec()));
    run
}

fn criterion_6_ndcg() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cases = 0;
    for case in 0..3000 {
        let judged = rng.gen_range(1..=6);
        let unjudged = rng.gen_range(0..=3);
        let k = rng.gen_range(1..=7);
        let grades: Vec<u32> = (0..judged).map(|_| rng.gen_range(0..=3)).collect();
        let mut qrels = QrelsTable::new();
        for (i, g) in grades.iter().enumerate() {
            qrels.insert("q", format!("j{i}"), *g);
        }
        let mut docs: Vec<String> = (0..judged)
            .map(|i| format!("j{i}"))
            .chain((0..unjudged).map(|i| format!("u{i}")))
            .collect();
        docs.shuffle(&mut rng);
        let result = ndcg_at_k(&single_run("q", &docs), &qrels, k);
        if grades.iter().all(|&g| g == 0) {
            ensure!(
                result.is_err(),
                "case {case}: query without relevant docs was scored"
            );
            continue;
        }
        let value = result.map_err(|e| e.to_string())?.mean;

        let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
        let dcg = |gs: &[u32]| -> f64 {
            gs.iter()
                .take(k)
                .enumerate()
                .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
                .sum()
        };
        let ideal = grades
            .iter()
            .copied()
            .permutations(judged)
            .map(|p| dcg(&p))
            .fold(0.0, f64::max);
        let ranked: Vec<u32> = docs.iter().map(|d| qrels.grade("q", d)).collect();
        let expected = dcg(&ranked) / ideal;
        ensure!(
            (value - expected).abs() < 1e-12,
            "case {case}: {value} vs oracle {expected}"
        );

        let mut ideal_docs: Vec<String> = (0..judged).map(|i| format!("j{i}")).collect();
        ideal_docs.sort_by_key(|d| std::cmp::Reverse(qrels.grade("q", d)));
        let perfect = ndcg_at_k(&single_run("q", &ideal_docs), &qrels, k)
            .unwrap()
            .mean;
        ensure!(
            (perfect - 1.0).abs() < 1e-9,
            "case {case}: ideal order scored {perfect}"
        );
        cases += 1;
    }

    let mut qrels = QrelsTable::new();
    for (d, g) in [("a", 3), ("b", 2), ("c", 0)] {
        qrels.insert("q", d, g);
    }
    let fixture = ndcg_at_k(
        &single_run("q", &["c".into(), "b".into(), "a".into()]),
        &qrels,
        5,
    )
    .unwrap()
    .mean;
    ensure!(
        (fixture - 0.6064).abs() < 1e-4,
        "3-doc fixture scored {fixture}"
    );
    Ok(format!(
        "{cases} instances match permutation enumeration; fixture {fixture:.4}"
    ))
}

fn criterion_7_reported_arithmetic() -> Outcome {
    let ndcg = relative_improvement(4.877, 5.478).map_err(|e| e.to_string())?;
    let f1 = relative_improvement(13.789, 15.228).map_err(|e| e.to_string())?;
    ensure!((ndcg - 12.3).abs() <= 0.05, "NDCG@5 lift {ndcg:.3}%");
    ensure!((f1 - 10.4).abs() <= 0.05, "F1 lift {f1:.3}%");
    Ok(format!("NDCG@5 +{ndcg:.2}%, F1 +{f1:.2}%"))
}

fn fixture_settings(fixture: &common::Fixture) -> Settings {
    Settings::load(Some(&fixture.config)).expect("fixture config parses")
}

fn inputs(fixture: &common::Fixture, cache_dir: Option<std::path::PathBuf>) -> RerankInputs {
    RerankInputs {
        queries: fixture.queries.clone(),
        corpus: fixture.corpus.clone(),
        run: fixture.run.clone(),
        cache_dir,
    }
}

fn criterion_8_end_to_end_lift() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = common::write_designed_fixture(dir.path(), false);
    let settings = fixture_settings(&fixture);
    let qrels = car_cli::commands::load_qrels(&fixture.qrels).map_err(|e| e.to_string())?;
    let baseline_run = car_cli::commands::load_run(&fixture.run).map_err(|e| e.to_string())?;

    let reference = common::designed_baseline_ndcg(5);
    let baseline = ndcg_at_k(&baseline_run, &qrels, 5)
        .map_err(|e| e.to_string())?
        .mean;
    ensure!(
        (baseline - reference).abs() < 1e-12,
        "baseline {baseline} disagrees with the reference {reference}"
    );
    let outcome = rerank(&settings, &inputs(&fixture, None)).map_err(|e| format!("{e:#}"))?;
    ensure!(outcome.failed_queries() == 0, "some queries failed");
    let car = ndcg_at_k(&outcome.run, &qrels, 5)
        .map_err(|e| e.to_string())?
        .mean;
    ensure!(car == 1.0, "CAR scored {car}, expected exactly 1.0");
    Ok(format!("mean NDCG@5 {baseline:.4} -> {car:.4}"))
}

fn criterion_9_replay_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = common::write_designed_fixture(dir.path(), true);
    let mut settings = fixture_settings(&fixture);
    settings.car.clustering_mode = ClusteringMode::Pairwise;
    let cache = dir.path().join("cache");
    let mut outputs = Vec::new();
    for pass in ["cold", "warm"] {
        let outcome = rerank(&settings, &inputs(&fixture, Some(cache.clone())))
            .map_err(|e| format!("{pass}: {e:#}"))?;
        let run = dir.path().join(format!("{pass}.run"));
        let report = dir.path().join(format!("{pass}.json"));
        write_rerank_outputs(&settings, &outcome, &run, &report).map_err(|e| e.to_string())?;
        outputs.push((
            std::fs::read(&run).map_err(|e| e.to_string())?,
            std::fs::read(&report).map_err(|e| e.to_string())?,
            outcome.usage,
        ));
    }
    let (cold, warm) = (&outputs[0], &outputs[1]);
    ensure!(
        cold.2.sample_requests > 0,
        "cold pass never reached the backend"
    );
    ensure!(
        warm.2.sample_requests == 0 && warm.2.judge_calls == 0,
        "warm pass made {} sample and {} judge calls",
        warm.2.sample_requests,
        warm.2.judge_calls
    );
    ensure!(cold.0 == warm.0, "run files differ");
    ensure!(cold.1 == warm.1, "report files differ");
    Ok(format!(
        "cold pass {} sample requests / {} judgments, warm pass 0 / 0, outputs byte-identical",
        cold.2.sample_requests, cold.2.judge_calls
    ))
}

fn criterion_10_sweep_frugality() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = common::write_designed_fixture(dir.path(), false);
    let settings = fixture_settings(&fixture);
    let single = rerank(&settings, &inputs(&fixture, None)).map_err(|e| format!("{e:#}"))?;

    let started = Instant::now();
    let grid = SweepGrid::default();
    let sweep = run_sweep(&settings, &inputs(&fixture, None), &fixture.qrels, &grid, 5)
        .map_err(|e| format!("{e:#}"))?;
    let elapsed = started.elapsed();

    let bound = common::QUERIES * (common::DOCS_PER_QUERY + 1) * common::K;
    ensure!(
        sweep.result.cells.len() == 121,
        "grid has {} cells",
        sweep.result.cells.len()
    );
    ensure!(
        sweep.usage.sampled_answers <= single.usage.sampled_answers,
        "sweep sampled {} answers, single pass {}",
        sweep.usage.sampled_answers,
        single.usage.sampled_answers
    );
    ensure!(
        single.usage.sampled_answers <= bound,
        "single pass sampled {} answers, bound {bound}",
        single.usage.sampled_answers
    );
    ensure!(elapsed < Duration::from_secs(30), "sweep took {elapsed:?}");
    Ok(format!(
        "11x11 sweep sampled {} answers, single pass {} (bound {bound}), {elapsed:.2?}",
        sweep.usage.sampled_answers, single.usage.sampled_answers
    ))
}

fn criterion_11_ablation_direction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = common::write_designed_fixture(dir.path(), true);
    let noise = common::noise_doc();
    let label_of = |settings: &Settings| -> Result<BinLabel, String> {
        let outcome = rerank(settings, &inputs(&fixture, None)).map_err(|e| format!("{e:#}"))?;
        outcome
            .reports
            .iter()
            .flat_map(|r| &r.per_doc)
            .find(|d| d.doc_id == noise)
            .map(|d| d.label)
            .ok_or_else(|| format!("{noise} has no label"))
    };
    let full = fixture_settings(&fixture);
    let mut ablated = full.clone();
    ablated.car.disable_cm = true;
    let (with_cm, without_cm) = (label_of(&full)?, label_of(&ablated)?);
    ensure!(
        with_cm == BinLabel::Preserve,
        "full CAR labelled the noise doc {with_cm:?}"
    );
    ensure!(
        without_cm == BinLabel::Promote,
        "disable_cm labelled the noise doc {without_cm:?}"
    );
    Ok(format!(
        "noise doc at c_q + m/2: full {with_cm:?}, disable_cm {without_cm:?}"
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("oracle equivalence", criterion_1_oracle_equivalence),
        ("gate identity", criterion_2_gate_identity),
        ("order preservation", criterion_3_order_preservation),
        ("clustering-mode agreement", criterion_4_mode_agreement),
        ("judge-call budgets", criterion_5_call_budgets),
        ("NDCG correctness", criterion_6_ndcg),
        ("reported lift arithmetic", criterion_7_reported_arithmetic),
        ("synthetic end-to-end lift", criterion_8_end_to_end_lift),
        ("replay determinism", criterion_9_replay_determinism),
        ("sweep frugality", criterion_10_sweep_frugality),
        ("ablation directionality", criterion_11_ablation_direction),
    ];
    let mut failures = 0;
    for (idx, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", idx + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {}: {name}: {detail}", idx + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
