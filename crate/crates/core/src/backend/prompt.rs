use sha2::{Digest, Sha256};

use super::GeneratorInput;
use crate::domain::Decoding;

/// Documents longer than this many characters are cut before prompting.
pub const DEFAULT_DOC_CHAR_BUDGET: usize = 4000;

const DEFAULT_QUERY_ONLY: &str = include_str!("../../prompts/query_only.txt");
const DEFAULT_QUERY_DOC: &str = include_str!("../../prompts/query_doc.txt");
const DEFAULT_ENTAILMENT: &str = include_str!("../../prompts/entailment.txt");

/// Prompt templates with `{query}`, `{document}`, `{premise}` and
/// `{hypothesis}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub query_only: String,
    pub query_doc: String,
    pub entailment: String,
    pub doc_char_budget: usize,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            query_only: DEFAULT_QUERY_ONLY.to_string(),
            query_doc: DEFAULT_QUERY_DOC.to_string(),
            entailment: DEFAULT_ENTAILMENT.to_string(),
            doc_char_budget: DEFAULT_DOC_CHAR_BUDGET,
        }
    }
}

impl PromptTemplates {
    pub fn render_input(&self, input: &GeneratorInput<'_>) -> String {
        match input {
            GeneratorInput::QueryOnly { query } => {
                render(&self.query_only, &[("query", &query.text)])
            }
            GeneratorInput::QueryDoc { query, document } => {
                let body = truncate_chars(&document.text, self.doc_char_budget);
                render(
                    &self.query_doc,
                    &[("query", &query.text), ("document", body)],
                )
            }
        }
    }

    pub fn render_entailment(&self, premise: &str, hypothesis: &str) -> String {
        render(
            &self.entailment,
            &[("premise", premise), ("hypothesis", hypothesis)],
        )
    }
}

fn truncate_chars(text: &str, budget: usize) -> &str {
    match text.char_indices().nth(budget) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

/// Single-pass placeholder substitution; substituted text is never rescanned.
/// Unknown `{name}` sequences are left as-is.
fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(key, _)| *key == name)
                .map(|(_, value)| (close, *value))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Hex SHA-256 over a rendered prompt plus the decoding parameters.
pub(crate) fn prompt_hash(prompt: &str, decoding: &Decoding) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hasher.update(b"\0");
    hasher.update(format!("t={};max={}", decoding.temperature, decoding.max_tokens).as_bytes());
    hex::encode(hasher.finalize())
}
