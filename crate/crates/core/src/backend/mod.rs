//! Generator abstraction: answer sampling and directed entailment judging.
//!
//! Two implementations ship with the crate: [`ScriptedBackend`], which replays
//! fixed answer lists and entailment tables, and [`HttpBackend`], which talks
//! to an OpenAI-compatible chat-completions endpoint.

mod counting;
mod http;
mod prompt;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AnswerNormalization, AnswerSample, Decoding, DocumentRecord, QueryRecord};

pub use counting::CountingGenerator;
pub use http::{HttpBackend, Transport, TransportError, UreqTransport, API_KEY_ENV};
pub(crate) use prompt::prompt_hash;
pub use prompt::{PromptTemplates, DEFAULT_DOC_CHAR_BUDGET};
pub use scripted::{
    EntailmentScript, EntailmentSpec, InputKey, ScriptFile, ScriptedBackend, ScriptedJudgment,
    ScriptedSamples,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no scripted entry for {0}")]
    ScriptMiss(String),
    #[error("request timed out")]
    Timeout,
    #[error("could not parse entailment judgment from reply `{0}`")]
    UnparseableJudgment(String),
    #[error("backend returned {got} answers, expected {expected}")]
    WrongSampleCount { expected: usize, got: usize },
}

/// What the generator is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorInput<'a> {
    QueryOnly {
        query: &'a QueryRecord,
    },
    QueryDoc {
        query: &'a QueryRecord,
        document: &'a DocumentRecord,
    },
}

impl<'a> GeneratorInput<'a> {
    pub fn query(&self) -> &'a QueryRecord {
        match self {
            GeneratorInput::QueryOnly { query } | GeneratorInput::QueryDoc { query, .. } => query,
        }
    }

    pub fn document(&self) -> Option<&'a DocumentRecord> {
        match self {
            GeneratorInput::QueryOnly { .. } => None,
            GeneratorInput::QueryDoc { document, .. } => Some(document),
        }
    }

    pub fn kind(&self) -> InputKind {
        match self {
            GeneratorInput::QueryOnly { .. } => InputKind::QueryOnly,
            GeneratorInput::QueryDoc { .. } => InputKind::QueryDoc,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            GeneratorInput::QueryOnly { query } => format!("query `{}`", query.query_id),
            GeneratorInput::QueryDoc { query, document } => {
                format!(
                    "query `{}` with document `{}`",
                    query.query_id, document.doc_id
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    QueryOnly,
    QueryDoc,
}

impl InputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::QueryOnly => "query_only",
            InputKind::QueryDoc => "query_doc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentVerdict {
    Entails,
    NotEntails,
}

impl EntailmentVerdict {
    pub fn entails(self) -> bool {
        self == EntailmentVerdict::Entails
    }
}

/// A black-box generator reachable only through sampling and prompting.
/// Implementations must tolerate concurrent calls.
pub trait Generator: Send + Sync {
    fn model_name(&self) -> &str;

    /// Model answering entailment judgments, when it differs from the sampler.
    fn judge_model_name(&self) -> &str {
        self.model_name()
    }

    /// Returns `k` raw, independently sampled answers for `input`.
    fn sample(
        &self,
        input: &GeneratorInput<'_>,
        k: usize,
        decoding: &Decoding,
    ) -> Result<Vec<String>, BackendError>;

    /// One directed judgment: does `premise` entail `hypothesis`?
    fn judge(
        &self,
        premise: &str,
        hypothesis: &str,
        decoding: &Decoding,
    ) -> Result<EntailmentVerdict, BackendError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn judge_model_name(&self) -> &str {
        (**self).judge_model_name()
    }

    fn sample(
        &self,
        input: &GeneratorInput<'_>,
        k: usize,
        decoding: &Decoding,
    ) -> Result<Vec<String>, BackendError> {
        (**self).sample(input, k, decoding)
    }

    fn judge(
        &self,
        premise: &str,
        hypothesis: &str,
        decoding: &Decoding,
    ) -> Result<EntailmentVerdict, BackendError> {
        (**self).judge(premise, hypothesis, decoding)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn judge_model_name(&self) -> &str {
        (**self).judge_model_name()
    }

    fn sample(
        &self,
        input: &GeneratorInput<'_>,
        k: usize,
        decoding: &Decoding,
    ) -> Result<Vec<String>, BackendError> {
        (**self).sample(input, k, decoding)
    }

    fn judge(
        &self,
        premise: &str,
        hypothesis: &str,
        decoding: &Decoding,
    ) -> Result<EntailmentVerdict, BackendError> {
        (**self).judge(premise, hypothesis, decoding)
    }
}

/// A directed entailment oracle as seen by the clustering routines.
pub trait EntailmentJudge: Sync {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, BackendError>;
}

impl<F> EntailmentJudge for F
where
    F: Fn(&str, &str) -> Result<EntailmentVerdict, BackendError> + Sync,
{
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, BackendError> {
        self(premise, hypothesis)
    }
}

/// Adapts a [`Generator`] into an [`EntailmentJudge`] with fixed decoding.
pub struct GeneratorJudge<'a, G: ?Sized> {
    generator: &'a G,
    decoding: Decoding,
}

impl<'a, G: Generator + ?Sized> GeneratorJudge<'a, G> {
    pub fn new(generator: &'a G, decoding: Decoding) -> Self {
        Self {
            generator,
            decoding,
        }
    }
}

impl<G: Generator + ?Sized> EntailmentJudge for GeneratorJudge<'_, G> {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, BackendError> {
        self.generator.judge(premise, hypothesis, &self.decoding)
    }
}

/// Samples `k` answers, labels them `0..k` and normalizes their text.
pub fn sample_answers<G: Generator + ?Sized>(
    generator: &G,
    input: &GeneratorInput<'_>,
    k: usize,
    decoding: &Decoding,
    normalization: AnswerNormalization,
) -> Result<Vec<AnswerSample>, BackendError> {
    let raw = generator.sample(input, k, decoding)?;
    if raw.len() != k {
        return Err(BackendError::WrongSampleCount {
            expected: k,
            got: raw.len(),
        });
    }
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(sample_index, text)| AnswerSample {
            text: normalization.apply(&text),
            sample_index,
        })
        .collect())
}

/// Directed judgment with the empty-answer rule applied first: two empty
/// answers entail each other, an empty and a non-empty answer never do, and
/// neither case reaches the judge.
pub fn judge_entailment<J: EntailmentJudge + ?Sized>(
    judge: &J,
    premise: &str,
    hypothesis: &str,
) -> Result<EntailmentVerdict, BackendError> {
    match (premise.trim().is_empty(), hypothesis.trim().is_empty()) {
        (true, true) => Ok(EntailmentVerdict::Entails),
        (true, false) | (false, true) => Ok(EntailmentVerdict::NotEntails),
        (false, false) => judge.judge(premise, hypothesis),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scripted" => Ok(BackendKind::Scripted),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Http => "http",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_kind: BackendKind,
    pub model_name: String,
    /// Optional separate model for entailment judging.
    pub judge_model_name: Option<String>,
    pub endpoint: Option<String>,
    pub request_timeout: Duration,
    pub max_concurrency: usize,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        match (self.backend_kind, &self.endpoint) {
            (BackendKind::Http, None) => return Err("http backend requires an endpoint".into()),
            (BackendKind::Scripted, Some(_)) => {
                return Err("scripted backend does not take an endpoint".into())
            }
            _ => {}
        }
        if self.max_concurrency == 0 {
            return Err("max_concurrency must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fail_judge(_: &str, _: &str) -> Result<EntailmentVerdict, BackendError> {
        panic!("judge must not be called")
    }

    #[test]
    fn empty_answers_entail_each_other_without_judge() {
        assert_eq!(
            judge_entailment(&fail_judge, "", "").unwrap(),
            EntailmentVerdict::Entails
        );
        assert_eq!(
            judge_entailment(&fail_judge, "", "paris").unwrap(),
            EntailmentVerdict::NotEntails
        );
        assert_eq!(
            judge_entailment(&fail_judge, "paris", " ").unwrap(),
            EntailmentVerdict::NotEntails
        );
    }

    #[test]
    fn descriptor_endpoint_rules() {
        let mut d = BackendDescriptor {
            backend_kind: BackendKind::Http,
            model_name: "m".into(),
            judge_model_name: None,
            endpoint: None,
            request_timeout: Duration::from_secs(1),
            max_concurrency: 4,
        };
        assert!(d.validate().is_err());
        d.endpoint = Some("http://localhost:8000/v1".into());
        assert!(d.validate().is_ok());
        d.backend_kind = BackendKind::Scripted;
        assert!(d.validate().is_err());
    }
}
