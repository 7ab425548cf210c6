use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CfError, DatasetManifest};
use crate::domain::{Action, Observation, TerminationExample, Trajectory};
use crate::labeling::{render, GradeError, PromptTemplates, ProviderError};
use crate::transport::{ChatMessage, HttpClient};

/// What a rationale writer gets to see.
#[derive(Debug, Clone, Copy)]
pub struct RationaleContext<'a> {
    pub example: &'a TerminationExample,
    /// The example's prefix, with any substitution applied.
    pub observations: &'a [Observation],
}

pub trait RationaleProvider: Send + Sync {
    fn rationale(&self, ctx: &RationaleContext<'_>) -> Result<String, ProviderError>;
}

/// Deterministic rationale naming the observation that supplied (terminate)
/// or withheld (continue) the key information.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateRationale;

impl RationaleProvider for TemplateRationale {
    fn rationale(&self, ctx: &RationaleContext<'_>) -> Result<String, ProviderError> {
        let last = ctx
            .observations
            .last()
            .ok_or_else(|| ProviderError::Unsupported("empty prefix".into()))?
            .index;
        let key = ctx
            .observations
            .iter()
            .find(|o| o.is_key == Some(true))
            .map(|o| o.index);
        Ok(match (ctx.example.decision, key) {
            (Action::Terminate, Some(k)) => format!(
                "Observation {k} supplied the key information, so the answer is already determined."
            ),
            (Action::Terminate, None) => format!(
                "The observations up to {last} already determine the answer."
            ),
            (Action::Continue, Some(k)) => format!(
                "Observation {k} looks informative but leaves the answer open; more information is needed."
            ),
            (Action::Continue, None) => format!(
                "Observation {last} withheld the key information and no earlier observation supplied it."
            ),
        })
    }
}

/// Rationale from a chat model, prompted with the rationale template.
#[derive(Debug)]
pub struct LlmRationale {
    pub client: HttpClient,
    pub templates: PromptTemplates,
}

impl RationaleProvider for LlmRationale {
    fn rationale(&self, ctx: &RationaleContext<'_>) -> Result<String, ProviderError> {
        let conversation = render_observations(ctx.observations);
        let decision = decision_suffix(ctx.example.decision, None);
        let prompt = render(
            &self.templates.rationale,
            &[("decision", decision.as_str()), ("conversation", conversation.as_str())],
        );
        Ok(self.client.chat(&[ChatMessage::user(prompt)])?)
    }
}

/// Fills `e.rationale`, trying the provider up to `1 + retries` times. An
/// empty reply counts as a failure. When every try fails the example comes
/// back unchanged.
pub fn augment_rationale(
    mut e: TerminationExample,
    observations: &[Observation],
    provider: &dyn RationaleProvider,
    retries: u32,
) -> Result<TerminationExample, CfError> {
    if e.rationale.is_some() {
        return Err(CfError::Precondition(format!(
            "example {}@{} already has a rationale",
            e.problem_id, e.prefix_len
        )));
    }
    let ctx = RationaleContext {
        example: &e,
        observations,
    };
    let mut last_err = String::new();
    for attempt in 0..=retries {
        match provider.rationale(&ctx) {
            Ok(r) if !r.trim().is_empty() => {
                e.rationale = Some(r.trim().to_string());
                return Ok(e);
            }
            Ok(_) => last_err = "empty reply".into(),
            Err(err) => last_err = err.to_string(),
        }
        log::debug!("{}@{}: rationale attempt {attempt} failed: {last_err}", e.problem_id, e.prefix_len);
    }
    log::warn!(
        "{}@{}: no rationale after {} tries ({last_err}); left unannotated",
        e.problem_id,
        e.prefix_len,
        retries + 1
    );
    Ok(e)
}

/// Sets `confidence_pct = round(100 p)`, halves rounding up.
pub fn augment_confidence(mut e: TerminationExample, p: f64) -> Result<TerminationExample, CfError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CfError::Range(format!("confidence {p} outside [0, 1]")));
    }
    // Round to 1e-9 first so 0.285 (stored as 28.499999...) still goes up.
    let scaled = ((100.0 * p) * 1e9).round() / 1e9;
    e.confidence_pct = Some((scaled + 0.5).floor() as u8);
    Ok(e)
}

pub fn confidence_phrase(pct: u8) -> String {
    format!("Confidence in providing a diagnosis: {pct}%")
}

fn render_observations(observations: &[Observation]) -> String {
    observations
        .iter()
        .map(|o| match (&o.text, &o.features) {
            (Some(t), _) => t.clone(),
            (None, Some(f)) => {
                let vals: Vec<String> = f.iter().map(|x| format!("{x:.3}")).collect();
                format!("Observation {}: [{}]", o.index, vals.join(", "))
            }
            (None, None) => format!("Observation {}: (empty)", o.index),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn decision_suffix(action: Action, ground_truth: Option<&str>) -> String {
    match (action, ground_truth) {
        (Action::Terminate, Some(gt)) => format!("Final Diagnosis: {gt}"),
        (Action::Terminate, None) => "Final Diagnosis".to_string(),
        (Action::Continue, _) => "Need More Information".to_string(),
    }
}

/// One supervised chat sample for an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub problem_id: String,
    pub prefix_len: usize,
    pub messages: Vec<ChatMessage>,
}

/// System prompt + conversation + decision suffix for every example. The
/// system prompt variant follows which annotations the example carries.
pub fn export_chat(
    manifest: &DatasetManifest,
    trajectories: &[Trajectory],
    templates: &PromptTemplates,
) -> Result<Vec<ChatRecord>, CfError> {
    let by_id: BTreeMap<&str, &Trajectory> =
        trajectories.iter().map(|t| (t.problem_id.as_str(), t)).collect();
    manifest
        .examples
        .iter()
        .map(|e| {
            let t = by_id.get(e.problem_id.as_str()).ok_or_else(|| CfError::Structural {
                problem_id: e.problem_id.clone(),
                message: "no source trajectory for example".into(),
            })?;
            let obs = e.prefix_observations(t).ok_or_else(|| CfError::Structural {
                problem_id: e.problem_id.clone(),
                message: format!("prefix {} outside trajectory of length {}", e.prefix_len, t.len()),
            })?;
            let system = match (e.rationale.is_some(), e.confidence_pct.is_some()) {
                (false, false) => &templates.termination,
                (true, false) => &templates.termination_reasoning,
                (false, true) => &templates.termination_confidence,
                (true, true) => &templates.termination_reasoning_confidence,
            };
            let mut answer = String::new();
            if let Some(r) = &e.rationale {
                answer.push_str(&format!("<think>\n{r}\n</think>\n"));
            }
            if let Some(pct) = e.confidence_pct {
                answer.push_str(&confidence_phrase(pct));
                answer.push('\n');
            }
            answer.push_str(&decision_suffix(e.decision, Some(&t.ground_truth)));
            Ok(ChatRecord {
                problem_id: e.problem_id.clone(),
                prefix_len: e.prefix_len,
                messages: vec![
                    ChatMessage::system(system.trim_end()),
                    ChatMessage::user(render_observations(&obs)),
                    ChatMessage::assistant(answer),
                ],
            })
        })
        .collect()
}

impl From<GradeError> for CfError {
    fn from(e: GradeError) -> Self {
        CfError::Precondition(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ObservationKind, Provenance};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn ex(action: Action) -> TerminationExample {
        let prov = if action == Action::Terminate {
            Provenance::OriginalTerminate
        } else {
            Provenance::ResampledContinue
        };
        TerminationExample::new("p", 3, action, prov)
    }

    fn obs(key_at: Option<usize>) -> Vec<Observation> {
        (0..3)
            .map(|i| {
                let mut o = Observation::with_features(i, ObservationKind::QuestionAnswer, vec![0.0]);
                o.is_key = Some(key_at == Some(i));
                o
            })
            .collect()
    }

    #[test]
    fn template_names_key_observation() {
        let e = augment_rationale(ex(Action::Terminate), &obs(Some(2)), &TemplateRationale, 0).unwrap();
        assert!(e.rationale.as_deref().unwrap().contains("Observation 2"));
        assert_eq!(e.decision, Action::Terminate);
        let c = augment_rationale(ex(Action::Continue), &obs(None), &TemplateRationale, 0).unwrap();
        assert!(c.rationale.as_deref().unwrap().contains("Observation 2 withheld"));
    }

    #[test]
    fn preset_rationale_is_rejected() {
        let mut e = ex(Action::Terminate);
        e.rationale = Some("x".into());
        assert!(matches!(
            augment_rationale(e, &obs(None), &TemplateRationale, 0),
            Err(CfError::Precondition(_))
        ));
    }

    struct Empty(AtomicU32);
    impl RationaleProvider for Empty {
        fn rationale(&self, _: &RationaleContext<'_>) -> Result<String, ProviderError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok("  ".into())
        }
    }

    #[test]
    fn empty_reply_is_a_failure() {
        let p = Empty(AtomicU32::new(0));
        let e = augment_rationale(ex(Action::Continue), &obs(None), &p, 2).unwrap();
        assert_eq!(e.rationale, None);
        assert_eq!(p.0.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn confidence_rounding() {
        let pct = |p| augment_confidence(ex(Action::Terminate), p).unwrap().confidence_pct.unwrap();
        assert_eq!(confidence_phrase(pct(0.3)), "Confidence in providing a diagnosis: 30%");
        assert_eq!(confidence_phrase(pct(0.0)), "Confidence in providing a diagnosis: 0%");
        assert_eq!(confidence_phrase(pct(0.847)), "Confidence in providing a diagnosis: 85%");
        assert_eq!(pct(0.285), 29);
        assert_eq!(pct(0.125), 13);
        assert_eq!(pct(1.0), 100);
        assert!(augment_confidence(ex(Action::Terminate), 1.01).is_err());
        assert!(augment_confidence(ex(Action::Terminate), -0.1).is_err());
    }
}
