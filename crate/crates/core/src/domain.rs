//! Domain types shared by every stage of the pipeline.
//!
//! Storage is 0-based: `observations[i].index == i` and `labels[i]` describes
//! the prefix holding the first `i + 1` observations. Rollouts and metrics
//! count consumed observations instead (1-based `stop_index`, the `t` of the
//! discounted objective). [`label_for_prefix`] and [`prefix_len_of_index`]
//! are the only places that translate between the two.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    QuestionAnswer,
    ReasoningEpisode,
}

/// One step of an information-gathering trace: a question-answer pair or a
/// reasoning episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub index: usize,
    pub kind: ObservationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    /// Ground-truth marker for synthetic environments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_key: Option<bool>,
}

impl Observation {
    pub fn with_text(index: usize, kind: ObservationKind, text: impl Into<String>) -> Self {
        Self {
            index,
            kind,
            text: Some(text.into()),
            features: None,
            is_key: None,
        }
    }

    pub fn with_features(index: usize, kind: ObservationKind, features: Vec<f64>) -> Self {
        Self {
            index,
            kind,
            text: None,
            features: Some(features),
            is_key: None,
        }
    }
}

/// Estimated success if the agent answers now (`p_term`) and, for reasoning
/// traces, if it keeps going (`p_cont`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixLabel {
    pub prefix_len: usize,
    pub p_term: f64,
    pub n_term_samples: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_cont: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cont_samples: Option<u32>,
}

impl PrefixLabel {
    pub fn terminate_only(prefix_len: usize, p_term: f64, n_term_samples: u32) -> Self {
        Self {
            prefix_len,
            p_term,
            n_term_samples,
            p_cont: None,
            n_cont_samples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Medical,
    Math,
    Synthetic,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Medical => "medical",
            Domain::Math => "math",
            Domain::Synthetic => "synthetic",
        })
    }
}

/// One problem's trace with its per-prefix success labels.
///
/// `labels` is empty for an unlabeled trace. Medical and synthetic traces are
/// labeled densely; math traces may carry a strictly increasing subset of
/// prefixes (evenly spaced subsampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub ground_truth: String,
    pub domain: Domain,
    pub observations: Vec<Observation>,
    #[serde(default)]
    pub labels: Vec<PrefixLabel>,
    /// Label for the empty prefix (no information gathered yet).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_label: Option<PrefixLabel>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Labels cover every prefix `1..=len` in order.
    pub fn is_densely_labeled(&self) -> bool {
        self.labels.len() == self.observations.len()
            && self
                .labels
                .iter()
                .enumerate()
                .all(|(i, l)| l.prefix_len == i + 1)
    }

    pub fn label(&self, prefix_len: usize) -> Option<&PrefixLabel> {
        label_for_prefix(&self.labels, prefix_len)
    }

    /// Observation-only view of the first `prefix_len` steps.
    pub fn view(&self, prefix_len: usize) -> PrefixView<'_> {
        PrefixView {
            problem_id: &self.problem_id,
            domain: self.domain,
            observations: &self.observations[..prefix_len],
            horizon: self.observations.len(),
        }
    }
}

/// What a policy is allowed to see: the observations gathered so far and the
/// trace length. Labels and the ground-truth answer are deliberately absent.
#[derive(Debug, Clone, Copy)]
pub struct PrefixView<'a> {
    pub problem_id: &'a str,
    pub domain: Domain,
    pub observations: &'a [Observation],
    pub horizon: usize,
}

impl PrefixView<'_> {
    pub fn prefix_len(&self) -> usize {
        self.observations.len()
    }
}

/// Looks up the label of a 1-based prefix length. Dense label lists are
/// indexed directly; sparse ones are searched.
pub fn label_for_prefix(labels: &[PrefixLabel], prefix_len: usize) -> Option<&PrefixLabel> {
    if prefix_len == 0 {
        return None;
    }
    match labels.get(prefix_len - 1) {
        Some(l) if l.prefix_len == prefix_len => Some(l),
        _ => labels
            .binary_search_by_key(&prefix_len, |l| l.prefix_len)
            .ok()
            .map(|i| &labels[i]),
    }
}

/// 1-based prefix length of the label stored at `index`.
pub fn prefix_len_of_index(labels: &[PrefixLabel], index: usize) -> Option<usize> {
    labels.get(index).map(|l| l.prefix_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Continue,
    Terminate,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Continue => "continue",
            Action::Terminate => "terminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub p_terminate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Decision {
    /// Applies the deterministic rule: terminate iff `p_terminate >= 0.5`.
    pub fn from_probability(p_terminate: f64) -> Self {
        let action = if p_terminate >= 0.5 {
            Action::Terminate
        } else {
            Action::Continue
        };
        Self {
            action,
            p_terminate,
            rationale: None,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OriginalTerminate,
    CounterfactualContinue,
    ResampledContinue,
    EarlierPrefixContinue,
    /// Uniformly sampled prefix labeled by its own success rate (baseline data).
    UniformSample,
}

impl Provenance {
    /// Decision this provenance forces, if any.
    pub fn required_decision(self) -> Option<Action> {
        match self {
            Provenance::OriginalTerminate => Some(Action::Terminate),
            Provenance::CounterfactualContinue
            | Provenance::ResampledContinue
            | Provenance::EarlierPrefixContinue => Some(Action::Continue),
            Provenance::UniformSample => None,
        }
    }
}

/// A labeled `(prefix -> decision)` training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationExample {
    pub problem_id: String,
    pub prefix_len: usize,
    pub decision: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_pct: Option<u8>,
    pub provenance: Provenance,
    /// Policy input vector for the prefix, when the observations are featurized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    /// Success label of this exact prefix (after any substitution).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_term: Option<f64>,
    /// Replacement for observation `prefix_len - 1` in counterfactual prefixes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution: Option<Observation>,
}

impl TerminationExample {
    pub fn new(
        problem_id: impl Into<String>,
        prefix_len: usize,
        decision: Action,
        provenance: Provenance,
    ) -> Self {
        Self {
            problem_id: problem_id.into(),
            prefix_len,
            decision,
            rationale: None,
            confidence_pct: None,
            provenance,
            features: None,
            p_term: None,
            substitution: None,
        }
    }

    /// Materializes the prefix this example describes from its source trace.
    pub fn prefix_observations(&self, source: &Trajectory) -> Option<Vec<Observation>> {
        if self.prefix_len == 0 || self.prefix_len > source.len() {
            return None;
        }
        let mut obs = source.observations[..self.prefix_len].to_vec();
        if let Some(sub) = &self.substitution {
            let last = obs.len() - 1;
            obs[last] = sub.clone();
        }
        Some(obs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualEdit {
    /// The single perturbed observation (0-based).
    Index(usize),
    /// Removed span of observations `[start, end)` (0-based).
    Span { start: usize, end: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub positive: TerminationExample,
    pub negative: TerminationExample,
    pub edit: CounterfactualEdit,
    pub attempts_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub problem_id: String,
    /// Observations consumed at termination (1-based).
    pub stop_index: usize,
    pub forced: bool,
    pub success_at_stop: f64,
    pub per_step_p_terminate: Vec<f64>,
    /// Steps at which the policy faulted and the rollout continued.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<usize>,
}

/// Summary of one policy over one evaluation population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub frq_sr: f64,
    pub frq_sr_ci: (f64, f64),
    pub frq_sr_diff_from_mean: f64,
    /// `None` when no trajectory has a breakpoint.
    pub otr: Option<f64>,
    pub otr_ci: Option<(f64, f64)>,
    pub mean_stop_index: f64,
    pub discounted_return: f64,
    pub gamma: f64,
    pub n_trajectories: usize,
    pub n_with_breakpoint: usize,
    pub n_forced: usize,
    pub rollouts: Vec<Rollout>,
}

/// Checks every structural invariant of a trajectory and describes each
/// breach. An empty list means the trajectory is well formed.
pub fn validate_trajectory(t: &Trajectory) -> Vec<String> {
    let mut violations = Vec::new();

    for (pos, obs) in t.observations.iter().enumerate() {
        if obs.index != pos {
            violations.push(format!(
                "observations[{pos}].index is {} (expected {pos})",
                obs.index
            ));
        }
        if obs.text.is_none() && obs.features.is_none() {
            violations.push(format!("observations[{pos}] has neither text nor features"));
        }
        if let Some(f) = &obs.features {
            if f.iter().any(|x| !x.is_finite()) {
                violations.push(format!("observations[{pos}].features has a non-finite entry"));
            }
        }
    }

    for (i, label) in t.labels.iter().enumerate() {
        check_label(&mut violations, &format!("labels[{i}]"), label);
    }
    if let Some(b) = &t.baseline_label {
        check_label(&mut violations, "baseline_label", b);
        if b.prefix_len != 0 {
            violations.push(format!(
                "baseline_label.prefix_len is {} (expected 0)",
                b.prefix_len
            ));
        }
    }

    if !t.labels.is_empty() {
        if t.domain == Domain::Math {
            let mut prev = 0;
            for (i, l) in t.labels.iter().enumerate() {
                if l.prefix_len <= prev || l.prefix_len > t.observations.len() {
                    violations.push(format!(
                        "labels[{i}].prefix_len is {} (must increase within 1..={})",
                        l.prefix_len,
                        t.observations.len()
                    ));
                }
                prev = prev.max(l.prefix_len);
            }
        } else {
            if t.labels.len() != t.observations.len() {
                violations.push(format!(
                    "labels length {} does not match observations length {}",
                    t.labels.len(),
                    t.observations.len()
                ));
            }
            for (i, l) in t.labels.iter().enumerate() {
                if l.prefix_len != i + 1 {
                    violations.push(format!(
                        "labels[{i}].prefix_len is {} (expected {})",
                        l.prefix_len,
                        i + 1
                    ));
                }
            }
        }
    }

    violations
}

fn check_label(out: &mut Vec<String>, name: &str, l: &PrefixLabel) {
    if !(0.0..=1.0).contains(&l.p_term) {
        out.push(format!("{name}.p_term is {} (outside [0, 1])", l.p_term));
    }
    if l.n_term_samples == 0 {
        out.push(format!("{name}.n_term_samples is 0"));
    }
    if let Some(p) = l.p_cont {
        if !(0.0..=1.0).contains(&p) {
            out.push(format!("{name}.p_cont is {p} (outside [0, 1])"));
        }
    }
    if l.n_cont_samples == Some(0) {
        out.push(format!("{name}.n_cont_samples is 0"));
    }
}

/// Violations of the provenance/decision coupling of an example.
pub fn validate_example(e: &TerminationExample) -> Option<String> {
    match e.provenance.required_decision() {
        Some(required) if required != e.decision => Some(format!(
            "example {}@{} has provenance {:?} but decision {}",
            e.problem_id, e.prefix_len, e.provenance, e.decision
        )),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize) -> Trajectory {
        Trajectory {
            problem_id: "p".into(),
            ground_truth: "y".into(),
            domain: Domain::Synthetic,
            observations: (0..n)
                .map(|i| Observation::with_features(i, ObservationKind::QuestionAnswer, vec![0.0]))
                .collect(),
            labels: (0..n)
                .map(|i| PrefixLabel::terminate_only(i + 1, 0.1, 1))
                .collect(),
            baseline_label: None,
        }
    }

    #[test]
    fn well_formed_has_no_violations() {
        assert!(validate_trajectory(&synthetic(4)).is_empty());
    }

    #[test]
    fn short_label_list_is_reported() {
        let mut t = synthetic(4);
        t.labels.truncate(3);
        let v = validate_trajectory(&t);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("labels length"), "{v:?}");
    }

    #[test]
    fn out_of_range_probability_is_reported() {
        let mut t = synthetic(4);
        t.labels[2].p_term = 1.2;
        let v = validate_trajectory(&t);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("labels[2].p_term"), "{v:?}");
    }

    #[test]
    fn math_labels_may_be_sparse() {
        let mut t = synthetic(30);
        t.domain = Domain::Math;
        t.labels = (1..=10)
            .map(|j| PrefixLabel::terminate_only(3 * j, 0.2, 4))
            .collect();
        assert!(validate_trajectory(&t).is_empty());
        assert_eq!(t.label(9).unwrap().prefix_len, 9);
        assert!(t.label(10).is_none());
    }

    #[test]
    fn decision_rule_terminates_at_half() {
        assert_eq!(Decision::from_probability(0.5).action, Action::Terminate);
        assert_eq!(Decision::from_probability(0.4999).action, Action::Continue);
    }

    #[test]
    fn provenance_coupling() {
        let mut e = TerminationExample::new("p", 2, Action::Continue, Provenance::OriginalTerminate);
        assert!(validate_example(&e).is_some());
        e.decision = Action::Terminate;
        assert!(validate_example(&e).is_none());
    }
}
