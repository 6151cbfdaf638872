//! Semantic clustering of sampled answers by bidirectional entailment.
//!
//! Two answers share a cluster only when each entails the other. Greedy mode
//! compares every answer against cluster representatives; pairwise mode judges
//! all pairs and takes connected components. Answers are expected in
//! `sample_index` order and already normalized: byte-identical answers are
//! merged without consulting the judge.

use rayon::prelude::*;

use crate::backend::{judge_entailment, BackendError, EntailmentJudge};
use crate::domain::{AnswerSample, ClusterAssignment, ConfidenceValue};

/// Bidirectional entailment check. The reverse direction is skipped when the
/// forward direction fails.
pub fn semantically_equivalent<J: EntailmentJudge + ?Sized>(
    a: &str,
    b: &str,
    judge: &J,
) -> Result<bool, BackendError> {
    if !judge_entailment(judge, a, b)?.entails() {
        return Ok(false);
    }
    Ok(judge_entailment(judge, b, a)?.entails())
}

fn trivially_equal(a: &str, b: &str) -> bool {
    a == b
}

/// Token-efficient clustering: each answer is compared with the first member
/// of every existing cluster, in creation order, and joins the first match.
pub fn cluster_greedy<J: EntailmentJudge + ?Sized>(
    answers: &[AnswerSample],
    judge: &J,
) -> Result<ClusterAssignment, BackendError> {
    assert!(!answers.is_empty(), "cannot cluster an empty answer set");
    let mut representatives: Vec<&str> = Vec::new();
    let mut labels = Vec::with_capacity(answers.len());
    for answer in answers {
        let mut assigned = None;
        for (cluster, rep) in representatives.iter().enumerate() {
            if trivially_equal(rep, &answer.text)
                || semantically_equivalent(rep, &answer.text, judge)?
            {
                assigned = Some(cluster);
                break;
            }
        }
        let label = assigned.unwrap_or_else(|| {
            representatives.push(&answer.text);
            representatives.len() - 1
        });
        labels.push(label);
    }
    Ok(ClusterAssignment::from_labels(labels).expect("greedy labels are contiguous"))
}

/// Low-latency clustering: every pair is judged (concurrently), then clusters
/// are the connected components of the equivalence graph, numbered by their
/// smallest member index.
///
/// With `short_circuit` off both directions of every pair are requested up
/// front; with it on the reverse direction waits on the forward verdict.
pub fn cluster_pairwise<J: EntailmentJudge + ?Sized>(
    answers: &[AnswerSample],
    judge: &J,
    short_circuit: bool,
) -> Result<ClusterAssignment, BackendError> {
    assert!(!answers.is_empty(), "cannot cluster an empty answer set");
    let k = answers.len();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect();

    let edges: Vec<bool> = if short_circuit {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (&answers[i].text, &answers[j].text);
                Ok(trivially_equal(a, b) || semantically_equivalent(a, b, judge)?)
            })
            .collect::<Result<_, BackendError>>()?
    } else {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (&answers[i].text, &answers[j].text);
                if trivially_equal(a, b) {
                    return Ok(true);
                }
                let (forward, backward) = rayon::join(
                    || judge_entailment(judge, a, b),
                    || judge_entailment(judge, b, a),
                );
                Ok(forward?.entails() && backward?.entails())
            })
            .collect::<Result<_, BackendError>>()?
    };

    let mut components = DisjointSet::new(k);
    for (&(i, j), _) in pairs.iter().zip(&edges).filter(|(_, &linked)| linked) {
        components.union(i, j);
    }

    let mut root_label = vec![usize::MAX; k];
    let mut next = 0;
    let labels = (0..k)
        .map(|i| {
            let root = components.find(i);
            if root_label[root] == usize::MAX {
                root_label[root] = next;
                next += 1;
            }
            root_label[root]
        })
        .collect();
    Ok(ClusterAssignment::from_labels(labels).expect("component labels are contiguous"))
}

/// Largest-cluster share of the samples.
pub fn confidence_from_clusters(assignment: &ClusterAssignment) -> ConfidenceValue {
    assignment.confidence()
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }
}
