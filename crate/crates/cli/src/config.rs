//! Flat `key=value` configuration with defaults for every key.
//!
//! Resolution order: built-in defaults, then the config file, then flags.
//! [`Settings::echo`] renders the resolved values so output files can record
//! how they were produced.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use car_core::backend::{
    BackendDescriptor, BackendKind, Generator, HttpBackend, PromptTemplates, ScriptedBackend,
    DEFAULT_DOC_CHAR_BUDGET,
};
use car_core::domain::{AnswerNormalization, CarConfig, ClusteringMode};

pub const DEFAULT_RUN_TAG: &str = "car";
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_MAX_CONCURRENCY: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub car: CarConfig,
    pub backend: BackendKind,
    /// Sampling model; the scripted backend falls back to its script's name.
    pub model: Option<String>,
    pub judge_model: Option<String>,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    pub doc_char_budget: usize,
    /// Answer script for the scripted backend.
    pub script: Option<PathBuf>,
    pub prompt_query: Option<PathBuf>,
    pub prompt_query_doc: Option<PathBuf>,
    pub prompt_judge: Option<PathBuf>,
    pub run_tag: String,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            car: CarConfig::default(),
            backend: BackendKind::Scripted,
            model: None,
            judge_model: None,
            endpoint: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
            doc_char_budget: DEFAULT_DOC_CHAR_BUDGET,
            script: None,
            prompt_query: None,
            prompt_query_doc: None,
            prompt_judge: None,
            run_tag: DEFAULT_RUN_TAG.to_string(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_string())
}

impl Settings {
    /// Defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut settings = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            settings
                .apply_text(&text)
                .with_context(|| format!("in config {}", path.display()))?;
        }
        Ok(settings)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", idx + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", idx + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let car = &mut self.car;
        match key {
            "k" => car.k = parse(key, value)?,
            "qt" => car.query_threshold = parse(key, value)?,
            "cm" => car.confidence_margin = parse(key, value)?,
            "top_n" => car.top_n = parse(key, value)?,
            "mode" => car.clustering_mode = parse::<ClusteringMode>(key, value)?,
            "disable_qt" => car.disable_qt = parse(key, value)?,
            "disable_cm" => car.disable_cm = parse(key, value)?,
            "pairwise_short_circuit" => car.pairwise_short_circuit = parse(key, value)?,
            "temperature" => car.sampling.temperature = parse(key, value)?,
            "max_tokens" => car.sampling.max_tokens = parse(key, value)?,
            "judge_temperature" => car.judging.temperature = parse(key, value)?,
            "judge_max_tokens" => car.judging.max_tokens = parse(key, value)?,
            "normalization" => car.answer_normalization = parse::<AnswerNormalization>(key, value)?,
            "backend" => self.backend = parse(key, value)?,
            "model" => self.model = optional(value),
            "judge_model" => self.judge_model = optional(value),
            "endpoint" => self.endpoint = optional(value),
            "timeout_secs" => self.timeout_secs = parse(key, value)?,
            "max_concurrency" => self.max_concurrency = parse(key, value)?,
            "doc_char_budget" => self.doc_char_budget = parse(key, value)?,
            "script" => self.script = optional(value).map(PathBuf::from),
            "prompt_query" => self.prompt_query = optional(value).map(PathBuf::from),
            "prompt_query_doc" => self.prompt_query_doc = optional(value).map(PathBuf::from),
            "prompt_judge" => self.prompt_judge = optional(value).map(PathBuf::from),
            "run_tag" => {
                if value.is_empty() || value.contains(char::is_whitespace) {
                    bail!("run_tag must be a single non-empty token");
                }
                self.run_tag = value.to_string();
            }
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.car.validate()?;
        self.descriptor().validate().map_err(|e| anyhow!(e))?;
        if self.backend == BackendKind::Scripted && self.script.is_none() {
            bail!("the scripted backend needs `script` (or --script)");
        }
        if self.backend == BackendKind::Http && self.model.is_none() {
            bail!("the http backend needs `model`");
        }
        Ok(())
    }

    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            backend_kind: self.backend,
            model_name: self.model.clone().unwrap_or_default(),
            judge_model_name: self.judge_model.clone(),
            endpoint: self.endpoint.clone(),
            request_timeout: Duration::from_secs(self.timeout_secs),
            max_concurrency: self.max_concurrency,
        }
    }

    pub fn prompts(&self) -> Result<PromptTemplates> {
        let mut prompts = PromptTemplates {
            doc_char_budget: self.doc_char_budget,
            ..PromptTemplates::default()
        };
        let read = |path: &Path| {
            std::fs::read_to_string(path)
                .with_context(|| format!("reading prompt template {}", path.display()))
        };
        if let Some(path) = &self.prompt_query {
            prompts.query_only = read(path)?;
        }
        if let Some(path) = &self.prompt_query_doc {
            prompts.query_doc = read(path)?;
        }
        if let Some(path) = &self.prompt_judge {
            prompts.entailment = read(path)?;
        }
        Ok(prompts)
    }

    pub fn build_backend(&self, prompts: &PromptTemplates) -> Result<Box<dyn Generator>> {
        self.validate()?;
        match self.backend {
            BackendKind::Scripted => {
                let path = self.script.as_ref().expect("validated");
                let mut backend = ScriptedBackend::load(path)
                    .with_context(|| format!("loading script {}", path.display()))?;
                if let Some(model) = &self.model {
                    backend = backend.with_model_name(model.clone());
                }
                Ok(Box::new(backend))
            }
            BackendKind::Http => {
                let mut backend = HttpBackend::from_env(
                    self.endpoint.clone().expect("validated"),
                    self.model.clone().expect("validated"),
                    Duration::from_secs(self.timeout_secs),
                    self.max_concurrency,
                    prompts.clone(),
                );
                if let Some(judge) = &self.judge_model {
                    backend = backend.with_judge_model(judge.clone());
                }
                Ok(Box::new(backend))
            }
        }
    }

    /// Every key with its resolved value, one `key=value` per entry.
    pub fn echo(&self) -> Vec<String> {
        let car = &self.car;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            format!("k={}", car.k),
            format!("qt={}", car.query_threshold),
            format!("cm={}", car.confidence_margin),
            format!("top_n={}", car.top_n),
            format!("mode={}", car.clustering_mode),
            format!("disable_qt={}", car.disable_qt),
            format!("disable_cm={}", car.disable_cm),
            format!("pairwise_short_circuit={}", car.pairwise_short_circuit),
            format!("temperature={}", car.sampling.temperature),
            format!("max_tokens={}", car.sampling.max_tokens),
            format!("judge_temperature={}", car.judging.temperature),
            format!("judge_max_tokens={}", car.judging.max_tokens),
            format!("normalization={}", car.answer_normalization),
            format!("backend={}", self.backend),
            format!("model={}", opt(self.model.clone())),
            format!("judge_model={}", opt(self.judge_model.clone())),
            format!("endpoint={}", opt(self.endpoint.clone())),
            format!("timeout_secs={}", self.timeout_secs),
            format!("max_concurrency={}", self.max_concurrency),
            format!("doc_char_budget={}", self.doc_char_budget),
            format!("script={}", opt(path(&self.script))),
            format!("prompt_query={}", opt(path(&self.prompt_query))),
            format!("prompt_query_doc={}", opt(path(&self.prompt_query_doc))),
            format!("prompt_judge={}", opt(path(&self.prompt_judge))),
            format!("run_tag={}", self.run_tag),
        ]
    }
}
