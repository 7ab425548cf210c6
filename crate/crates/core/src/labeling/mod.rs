//! Per-prefix success labels: estimation from a success provider, difficulty
//! filtering of problems, and the synthetic environment used at desk scale.

mod grader;
mod synth;

pub use grader::{
    grade_with_llm, render, render_conversation, GradeError, GraderProvider, PromptTemplates,
};
pub use synth::{BernoulliSampler, SynthConfig, SynthEnv, SynthOracle, SynthPerturber};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Domain, Observation, PrefixLabel, Trajectory};
use crate::seeding::item_stream;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Grading(#[from] GradeError),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(e) => e.is_retryable(),
            ProviderError::Grading(GradeError::Transport(e)) => e.is_retryable(),
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("labeling prefix {prefix_len} of {problem_id}: {source}")]
    Provider {
        problem_id: String,
        prefix_len: usize,
        #[source]
        source: ProviderError,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("trajectory {problem_id}: {message}")]
    Structural { problem_id: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl LabelingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LabelingError::Provider { source, .. } if source.is_retryable())
    }
}

/// Which success rate a query asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Answer from the prefix as it stands.
    Terminate,
    /// Keep going to the end of the trace, then answer.
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    /// Knows the true probability.
    Exact,
    /// Produces Bernoulli draws only.
    Sampled,
}

/// A prefix presented to a success provider. Unlike [`crate::domain::PrefixView`]
/// this carries the ground-truth answer the grader compares against.
#[derive(Debug, Clone, Copy)]
pub struct SuccessQuery<'a> {
    pub problem_id: &'a str,
    pub ground_truth: &'a str,
    pub domain: Domain,
    pub observations: &'a [Observation],
}

impl<'a> SuccessQuery<'a> {
    pub fn prefix(t: &'a Trajectory, prefix_len: usize) -> Self {
        Self::with_observations(t, &t.observations[..prefix_len])
    }

    pub fn with_observations(t: &'a Trajectory, observations: &'a [Observation]) -> Self {
        Self {
            problem_id: &t.problem_id,
            ground_truth: &t.ground_truth,
            domain: t.domain,
            observations,
        }
    }
}

/// Estimates `r(x, y_t)`: the chance the final answer is right given a prefix.
///
/// Draws for a fixed query must be i.i.d.; they are driven by the RNG passed
/// in, so exact providers stay reproducible when sampled.
pub trait SuccessProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn supports_continue(&self) -> bool {
        false
    }

    /// True success probability. Only exact providers implement this.
    fn probability(&self, _q: &SuccessQuery<'_>, _outcome: Outcome) -> Result<f64, ProviderError> {
        Err(ProviderError::Unsupported(
            "sampled provider has no closed-form probability".into(),
        ))
    }

    /// One Bernoulli success draw.
    fn draw(
        &self,
        q: &SuccessQuery<'_>,
        outcome: Outcome,
        rng: &mut ChaCha8Rng,
    ) -> Result<bool, ProviderError> {
        let p = self.probability(q, outcome)?;
        Ok(rng.random::<f64>() < p)
    }
}

/// Success estimate for an arbitrary (possibly edited) prefix.
///
/// `stream` separates RNG streams of different estimation purposes (original
/// labels, counterfactual relabels, ...).
pub fn estimate_query(
    provider: &dyn SuccessProvider,
    q: &SuccessQuery<'_>,
    outcome: Outcome,
    n_samples: u32,
    seed: u64,
    stream: &str,
) -> Result<f64, LabelingError> {
    let prefix_len = q.observations.len();
    let wrap = |source| LabelingError::Provider {
        problem_id: q.problem_id.to_string(),
        prefix_len,
        source,
    };
    if n_samples == 0 {
        return Err(LabelingError::Precondition("n_samples must be at least 1".into()));
    }
    if provider.kind() == ProviderKind::Exact {
        return provider.probability(q, outcome).map_err(wrap);
    }
    let tag = match outcome {
        Outcome::Terminate => format!("{stream}/term"),
        Outcome::Continue => format!("{stream}/cont"),
    };
    let mut rng = item_stream(seed, &tag, q.problem_id, prefix_len as u64);
    let mut successes = 0u32;
    for _ in 0..n_samples {
        if provider.draw(q, outcome, &mut rng).map_err(wrap)? {
            successes += 1;
        }
    }
    Ok(f64::from(successes) / f64::from(n_samples))
}

/// Labels the prefix holding the first `prefix_len` observations of `t`.
/// Exact providers short-circuit to the true probability; the requested
/// sample count is still recorded.
pub fn estimate_success(
    provider: &dyn SuccessProvider,
    t: &Trajectory,
    prefix_len: usize,
    n_samples: u32,
    seed: u64,
) -> Result<PrefixLabel, LabelingError> {
    if prefix_len == 0 || prefix_len > t.len() {
        return Err(LabelingError::Precondition(format!(
            "prefix_len {prefix_len} outside 1..={}",
            t.len()
        )));
    }
    label_prefix(provider, t, prefix_len, n_samples, seed)
}

fn label_prefix(
    provider: &dyn SuccessProvider,
    t: &Trajectory,
    prefix_len: usize,
    n_samples: u32,
    seed: u64,
) -> Result<PrefixLabel, LabelingError> {
    let q = SuccessQuery::prefix(t, prefix_len);
    let p_term = estimate_query(provider, &q, Outcome::Terminate, n_samples, seed, "label")?;
    let mut label = PrefixLabel::terminate_only(prefix_len, p_term, n_samples);
    if provider.supports_continue() {
        label.p_cont = Some(estimate_query(
            provider,
            &q,
            Outcome::Continue,
            n_samples,
            seed,
            "label",
        )?);
        label.n_cont_samples = Some(n_samples);
    }
    Ok(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixSelection {
    /// Every prefix `1..=len`.
    All,
    /// `count` evenly spaced prefixes ending at the full trace.
    Evenly(usize),
}

impl PrefixSelection {
    pub fn default_for(domain: Domain) -> Self {
        match domain {
            Domain::Math => PrefixSelection::Evenly(10),
            Domain::Medical | Domain::Synthetic => PrefixSelection::All,
        }
    }

    /// 1-based prefix lengths selected for a trace of `len` observations.
    pub fn prefixes(self, len: usize) -> Vec<usize> {
        match self {
            PrefixSelection::All => (1..=len).collect(),
            PrefixSelection::Evenly(count) if count == 0 || count >= len => (1..=len).collect(),
            PrefixSelection::Evenly(count) => {
                let mut out: Vec<usize> = (1..=count).map(|j| (j * len).div_ceil(count)).collect();
                out.dedup();
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPlan {
    pub n_samples: u32,
    pub seed: u64,
    pub selection: PrefixSelection,
    /// Also label the empty prefix into `baseline_label`.
    pub label_baseline: bool,
}

impl LabelPlan {
    pub fn for_domain(domain: Domain, n_samples: u32, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            selection: PrefixSelection::default_for(domain),
            label_baseline: false,
        }
    }
}

/// Returns `t` with labels for every selected prefix. Prefixes are labeled in
/// parallel on independent RNG streams; the result does not depend on
/// scheduling.
pub fn label_trajectory(
    provider: &dyn SuccessProvider,
    t: &Trajectory,
    plan: &LabelPlan,
) -> Result<Trajectory, LabelingError> {
    if t.is_empty() {
        return Err(LabelingError::Precondition(format!(
            "trajectory {} has no observations",
            t.problem_id
        )));
    }
    let prefixes = plan.selection.prefixes(t.len());
    let results: Vec<Result<PrefixLabel, LabelingError>> = prefixes
        .par_iter()
        .map(|&len| label_prefix(provider, t, len, plan.n_samples, plan.seed))
        .collect();
    let labels = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut out = t.clone();
    out.labels = labels;
    if plan.label_baseline {
        let q = SuccessQuery::with_observations(t, &[]);
        let p = estimate_query(provider, &q, Outcome::Terminate, plan.n_samples, plan.seed, "label")?;
        out.baseline_label = Some(PrefixLabel::terminate_only(0, p, plan.n_samples));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Too hard even with full information.
    Unsolvable,
    /// Solvable from the preliminary information alone.
    Trivial,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<Trajectory>,
    pub dropped: Vec<(Trajectory, DropReason)>,
}

/// Keeps problems of intermediate difficulty: solvable with the full trace
/// (`p_term(full) >= min_full_info`) but not from the preliminary information
/// alone (`p_term(first) < max_single_turn`). The preliminary information is
/// the baseline label when present, otherwise the first prefix.
pub fn filter_problems(
    trajectories: Vec<Trajectory>,
    min_full_info: f64,
    max_single_turn: f64,
) -> Result<FilterOutcome, LabelingError> {
    let mut out = FilterOutcome::default();
    for t in trajectories {
        let full = t.label(t.len()).map(|l| l.p_term);
        let single = t
            .baseline_label
            .as_ref()
            .map(|l| l.p_term)
            .or_else(|| t.label(1).map(|l| l.p_term));
        let (Some(full), Some(single)) = (full, single) else {
            return Err(LabelingError::Structural {
                problem_id: t.problem_id.clone(),
                message: "needs a full-trace label and a first-prefix or baseline label".into(),
            });
        };
        if full < min_full_info {
            out.dropped.push((t, DropReason::Unsolvable));
        } else if single >= max_single_turn {
            out.dropped.push((t, DropReason::Trivial));
        } else {
            out.kept.push(t);
        }
    }
    Ok(out)
}

/// Drops evaluation traces where no prefix reaches `min_any_prefix`.
pub fn filter_eval_conversations(trajectories: Vec<Trajectory>, min_any_prefix: f64) -> Vec<Trajectory> {
    trajectories
        .into_iter()
        .filter(|t| {
            if t.labels.is_empty() {
                log::warn!("dropping {}: no labels", t.problem_id);
                return false;
            }
            t.labels.iter().any(|l| l.p_term >= min_any_prefix)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ObservationKind;

    /// Exact provider with a fixed probability for every prefix.
    struct Constant(f64);

    impl SuccessProvider for Constant {
        fn kind(&self) -> ProviderKind {
            ProviderKind::Exact
        }
        fn probability(&self, _: &SuccessQuery<'_>, _: Outcome) -> Result<f64, ProviderError> {
            Ok(self.0)
        }
    }

    fn traj(n: usize) -> Trajectory {
        Trajectory {
            problem_id: "t".into(),
            ground_truth: "y".into(),
            domain: Domain::Medical,
            observations: (0..n)
                .map(|i| Observation::with_text(i, ObservationKind::QuestionAnswer, format!("q{i}")))
                .collect(),
            labels: Vec::new(),
            baseline_label: None,
        }
    }

    fn labeled(ps: &[f64]) -> Trajectory {
        let mut t = traj(ps.len());
        t.labels = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| PrefixLabel::terminate_only(i + 1, p, 50))
            .collect();
        t
    }

    #[test]
    fn exact_degenerate_probabilities() {
        let t = traj(3);
        for p in [0.0, 1.0] {
            let l = estimate_success(&Constant(p), &t, 2, 50, 1).unwrap();
            assert_eq!(l.p_term, p);
            assert_eq!(l.n_term_samples, 50);
            assert_eq!(l.prefix_len, 2);
        }
    }

    #[test]
    fn prefix_len_precondition() {
        let t = traj(3);
        assert!(estimate_success(&Constant(0.5), &t, 0, 5, 1).is_err());
        assert!(estimate_success(&Constant(0.5), &t, 4, 5, 1).is_err());
        assert!(estimate_success(&Constant(0.5), &t, 1, 0, 1).is_err());
    }

    #[test]
    fn medical_mode_labels_every_prefix() {
        let t = label_trajectory(&Constant(0.3), &traj(4), &LabelPlan::for_domain(Domain::Medical, 10, 0)).unwrap();
        let lens: Vec<_> = t.labels.iter().map(|l| l.prefix_len).collect();
        assert_eq!(lens, [1, 2, 3, 4]);
        let one = label_trajectory(&Constant(0.3), &traj(1), &LabelPlan::for_domain(Domain::Medical, 10, 0)).unwrap();
        assert_eq!(one.labels.len(), 1);
    }

    #[test]
    fn evenly_spaced_subsample() {
        assert_eq!(
            PrefixSelection::Evenly(10).prefixes(30),
            [3, 6, 9, 12, 15, 18, 21, 24, 27, 30]
        );
        let p = PrefixSelection::Evenly(10).prefixes(25);
        assert_eq!(p.len(), 10);
        assert_eq!(*p.last().unwrap(), 25);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(PrefixSelection::Evenly(10).prefixes(4), [1, 2, 3, 4]);
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        assert!(label_trajectory(&Constant(0.3), &traj(0), &LabelPlan::for_domain(Domain::Medical, 1, 0)).is_err());
    }

    #[test]
    fn difficulty_filter() {
        let keep = labeled(&[0.35, 0.25]);
        let unsolvable = labeled(&[0.30, 0.15]);
        let trivial = labeled(&[0.45, 0.50]);
        let out = filter_problems(vec![keep, unsolvable, trivial], 0.2, 0.4).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.dropped[0].1, DropReason::Unsolvable);
        assert_eq!(out.dropped[1].1, DropReason::Trivial);
    }

    #[test]
    fn difficulty_filter_prefers_baseline() {
        let mut t = labeled(&[0.45, 0.5]);
        t.baseline_label = Some(PrefixLabel::terminate_only(0, 0.1, 50));
        let out = filter_problems(vec![t], 0.2, 0.4).unwrap();
        assert_eq!(out.kept.len(), 1);
    }

    #[test]
    fn difficulty_filter_requires_labels() {
        let err = filter_problems(vec![traj(3)], 0.2, 0.4).unwrap_err();
        assert!(matches!(err, LabelingError::Structural { .. }));
    }

    #[test]
    fn eval_filter() {
        let kept = filter_eval_conversations(
            vec![labeled(&[0.0, 0.05, 0.09]), labeled(&[0.0, 0.12]), traj(2)],
            0.1,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].labels[1].p_term, 0.12);
    }
}
