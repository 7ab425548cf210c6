//! Three-stage LLM grading of a conversation prefix: elicit a diagnosis,
//! extract its name, then judge equivalence with the ground truth.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Outcome, ProviderError, ProviderKind, SuccessProvider, SuccessQuery};
use crate::domain::Observation;
use crate::transport::{ChatMessage, HttpClient, TransportError};

#[derive(Debug, Error)]
pub enum GradeError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("equivalence stage replied {0:?}, expected yes or no")]
    Protocol(String),
    #[error("observation {0} has no text to show the grader")]
    MissingText(usize),
    #[error("reading prompt template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Prompt texts with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub diagnosis: String,
    pub extraction: String,
    pub equivalence: String,
    pub rationale: String,
    pub termination: String,
    pub termination_reasoning: String,
    pub termination_confidence: String,
    pub termination_reasoning_confidence: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            diagnosis: include_str!("../../prompts/diagnosis.txt").to_string(),
            extraction: include_str!("../../prompts/extraction.txt").to_string(),
            equivalence: include_str!("../../prompts/equivalence.txt").to_string(),
            rationale: include_str!("../../prompts/rationale.txt").to_string(),
            termination: include_str!("../../prompts/termination.txt").to_string(),
            termination_reasoning: include_str!("../../prompts/termination_reasoning.txt").to_string(),
            termination_confidence: include_str!("../../prompts/termination_confidence.txt").to_string(),
            termination_reasoning_confidence: include_str!(
                "../../prompts/termination_reasoning_confidence.txt"
            )
            .to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `<name>.txt` files from `dir`; missing files keep the default.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, GradeError> {
        let dir = dir.as_ref();
        let mut t = Self::default();
        let slots: [(&str, &mut String); 8] = [
            ("diagnosis", &mut t.diagnosis),
            ("extraction", &mut t.extraction),
            ("equivalence", &mut t.equivalence),
            ("rationale", &mut t.rationale),
            ("termination", &mut t.termination),
            ("termination_reasoning", &mut t.termination_reasoning),
            ("termination_confidence", &mut t.termination_confidence),
            (
                "termination_reasoning_confidence",
                &mut t.termination_reasoning_confidence,
            ),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|source| GradeError::Template {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{key}` for each pair; unknown placeholders are left alone.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end_matches('\n').to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// One text block per observation, in order.
pub fn render_conversation(observations: &[Observation]) -> Result<String, GradeError> {
    let mut parts = Vec::with_capacity(observations.len());
    for o in observations {
        parts.push(o.text.as_deref().ok_or(GradeError::MissingText(o.index))?);
    }
    Ok(parts.join("\n"))
}

/// Stage-2 replies that end grading as a failure.
fn is_no_diagnosis(extracted: &str) -> bool {
    let s = clean_reply(extracted);
    s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("multiple")
}

fn clean_reply(s: &str) -> &str {
    s.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '\'' | '"' | '*' | '`' | '.')
    })
}

fn parse_yes_no(reply: &str) -> Result<bool, GradeError> {
    let s = clean_reply(reply).to_ascii_lowercase();
    if s.starts_with("yes") {
        Ok(true)
    } else if s.starts_with("no") && !s.starts_with("none") {
        Ok(false)
    } else {
        Err(GradeError::Protocol(reply.to_string()))
    }
}

/// One success draw for `conversation` against `ground_truth`.
pub fn grade_with_llm(
    client: &HttpClient,
    templates: &PromptTemplates,
    conversation: &str,
    ground_truth: &str,
) -> Result<bool, GradeError> {
    let diagnosis = client.chat(&[
        ChatMessage::system(render(&templates.diagnosis, &[("conversation", conversation)])),
        ChatMessage::user(conversation),
    ])?;

    let extracted = client.chat(&[ChatMessage::system(render(
        &templates.extraction,
        &[("diagnosis", diagnosis.trim())],
    ))])?;
    if is_no_diagnosis(&extracted) {
        return Ok(false);
    }

    let verdict = client.chat(&[ChatMessage::system(render(
        &templates.equivalence,
        &[("ground_truth", ground_truth), ("diagnosis", clean_reply(&extracted))],
    ))])?;
    parse_yes_no(&verdict)
}

/// Sampled provider that grades text prefixes with an external model.
#[derive(Debug)]
pub struct GraderProvider {
    pub client: HttpClient,
    pub templates: PromptTemplates,
}

impl SuccessProvider for GraderProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Sampled
    }

    fn draw(
        &self,
        q: &SuccessQuery<'_>,
        outcome: Outcome,
        _rng: &mut ChaCha8Rng,
    ) -> Result<bool, ProviderError> {
        if outcome == Outcome::Continue {
            return Err(ProviderError::Unsupported(
                "the grader labels stopped prefixes only".into(),
            ));
        }
        let conversation = render_conversation(q.observations)?;
        Ok(grade_with_llm(
            &self.client,
            &self.templates,
            &conversation,
            q.ground_truth,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_templates_carry_placeholders() {
        let t = PromptTemplates::default();
        assert!(t.diagnosis.starts_with("No more questions."));
        assert!(t.extraction.contains("{diagnosis}"));
        assert!(t.equivalence.contains("{ground_truth}"));
        assert!(t.equivalence.contains("{diagnosis}"));
        assert!(t.termination.contains("Need More Information"));
    }

    #[test]
    fn render_leaves_unknown_placeholders() {
        assert_eq!(render("a {x} {y}\n", &[("x", "1")]), "a 1 {y}");
    }

    #[test]
    fn stage_two_sentinels() {
        assert!(is_no_diagnosis("Multiple"));
        assert!(is_no_diagnosis("'None'."));
        assert!(!is_no_diagnosis("Chronic bronchitis"));
    }

    #[test]
    fn yes_no_parsing() {
        assert!(parse_yes_no("Yes").unwrap());
        assert!(parse_yes_no(" yes.").unwrap());
        assert!(!parse_yes_no("No").unwrap());
        assert!(matches!(parse_yes_no("Maybe"), Err(GradeError::Protocol(_))));
        assert!(parse_yes_no("None").is_err());
    }
}
