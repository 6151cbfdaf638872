use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, EntailmentVerdict, Generator, GeneratorInput};
use crate::domain::{AnswerNormalization, Decoding};

/// Identity of a generator input for script lookups.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputKey {
    pub query_id: String,
    #[serde(default)]
    pub doc_id: Option<String>,
}

impl InputKey {
    pub fn query(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            doc_id: None,
        }
    }

    pub fn query_doc(query_id: impl Into<String>, doc_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            doc_id: Some(doc_id.into()),
        }
    }

    pub fn of(input: &GeneratorInput<'_>) -> Self {
        Self {
            query_id: input.query().query_id.clone(),
            doc_id: input.document().map(|d| d.doc_id.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum EntailmentScript {
    /// ENTAILS iff the trimmed, lowercased strings are equal.
    #[default]
    Equality,
    /// Explicit directed verdicts; unlisted pairs are script misses.
    Table(HashMap<(String, String), EntailmentVerdict>),
}

/// Replays fixed answer lists and entailment verdicts. A pure function of
/// its scripts: repeated calls return identical results.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    model_name: String,
    samples: HashMap<InputKey, Vec<String>>,
    entailment: EntailmentScript,
}

impl ScriptedBackend {
    pub fn new(samples: HashMap<InputKey, Vec<String>>, entailment: EntailmentScript) -> Self {
        Self {
            model_name: "scripted".to_string(),
            samples,
            entailment,
        }
    }

    /// Backend with an equality-rule judge.
    pub fn with_equality_judge(samples: HashMap<InputKey, Vec<String>>) -> Self {
        Self::new(samples, EntailmentScript::Equality)
    }

    pub fn with_model_name(mut self, name: impl Into<String>) -> Self {
        self.model_name = name.into();
        self
    }

    pub fn insert_samples<I, S>(&mut self, key: InputKey, answers: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.samples
            .insert(key, answers.into_iter().map(Into::into).collect());
    }

    pub fn from_script(script: ScriptFile) -> Self {
        let samples = script
            .samples
            .into_iter()
            .map(|entry| {
                (
                    InputKey {
                        query_id: entry.query_id,
                        doc_id: entry.doc_id,
                    },
                    entry.answers,
                )
            })
            .collect();
        let entailment = match script.entailment {
            EntailmentSpec::Equality => EntailmentScript::Equality,
            EntailmentSpec::Table(rows) => EntailmentScript::Table(
                rows.into_iter()
                    .map(|row| ((row.premise, row.hypothesis), row.verdict))
                    .collect(),
            ),
        };
        let backend = Self::new(samples, entailment);
        match script.model {
            Some(name) => backend.with_model_name(name),
            None => backend,
        }
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::from_script(script))
    }
}

impl Generator for ScriptedBackend {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn sample(
        &self,
        input: &GeneratorInput<'_>,
        k: usize,
        _decoding: &Decoding,
    ) -> Result<Vec<String>, BackendError> {
        match self.samples.get(&InputKey::of(input)) {
            Some(answers) if answers.len() >= k => Ok(answers[..k].to_vec()),
            Some(answers) => Err(BackendError::ScriptMiss(format!(
                "{}: {} answers scripted, {k} requested",
                input.describe(),
                answers.len()
            ))),
            None => Err(BackendError::ScriptMiss(input.describe())),
        }
    }

    fn judge(
        &self,
        premise: &str,
        hypothesis: &str,
        _decoding: &Decoding,
    ) -> Result<EntailmentVerdict, BackendError> {
        match &self.entailment {
            EntailmentScript::Equality => {
                let norm = AnswerNormalization::TrimLower;
                Ok(if norm.apply(premise) == norm.apply(hypothesis) {
                    EntailmentVerdict::Entails
                } else {
                    EntailmentVerdict::NotEntails
                })
            }
            EntailmentScript::Table(table) => table
                .get(&(premise.to_string(), hypothesis.to_string()))
                .copied()
                .ok_or_else(|| {
                    BackendError::ScriptMiss(format!("judgment `{premise}` -> `{hypothesis}`"))
                }),
        }
    }
}

/// On-disk (JSON) form of a scripted backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub model: Option<String>,
    pub samples: Vec<ScriptedSamples>,
    #[serde(default)]
    pub entailment: EntailmentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSamples {
    pub query_id: String,
    #[serde(default)]
    pub doc_id: Option<String>,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentSpec {
    #[default]
    Equality,
    Table(Vec<ScriptedJudgment>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedJudgment {
    pub premise: String,
    pub hypothesis: String,
    pub verdict: EntailmentVerdict,
}
