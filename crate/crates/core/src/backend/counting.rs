use std::sync::atomic::{AtomicUsize, Ordering};

use super::{BackendError, EntailmentVerdict, Generator, GeneratorInput};
use crate::domain::Decoding;

/// Wraps a generator and counts the requests that reach it.
///
/// `sampled_answers` counts individual answers (a `k`-sample request adds
/// `k`), `judge_calls` counts directed judgments.
pub struct CountingGenerator<G> {
    inner: G,
    sample_requests: AtomicUsize,
    sampled_answers: AtomicUsize,
    judge_calls: AtomicUsize,
}

impl<G> CountingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            sample_requests: AtomicUsize::new(0),
            sampled_answers: AtomicUsize::new(0),
            judge_calls: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    pub fn sample_requests(&self) -> usize {
        self.sample_requests.load(Ordering::SeqCst)
    }

    pub fn sampled_answers(&self) -> usize {
        self.sampled_answers.load(Ordering::SeqCst)
    }

    pub fn judge_calls(&self) -> usize {
        self.judge_calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.sample_requests.store(0, Ordering::SeqCst);
        self.sampled_answers.store(0, Ordering::SeqCst);
        self.judge_calls.store(0, Ordering::SeqCst);
    }
}

impl<G: Generator> Generator for CountingGenerator<G> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn judge_model_name(&self) -> &str {
        self.inner.judge_model_name()
    }

    fn sample(
        &self,
        input: &GeneratorInput<'_>,
        k: usize,
        decoding: &Decoding,
    ) -> Result<Vec<String>, BackendError> {
        self.sample_requests.fetch_add(1, Ordering::SeqCst);
        self.sampled_answers.fetch_add(k, Ordering::SeqCst);
        self.inner.sample(input, k, decoding)
    }

    fn judge(
        &self,
        premise: &str,
        hypothesis: &str,
        decoding: &Decoding,
    ) -> Result<EntailmentVerdict, BackendError> {
        self.judge_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.judge(premise, hypothesis, decoding)
    }
}
