//! Termination policies. A policy sees a [`PrefixView`] (observations only)
//! and returns a [`Decision`]; it never sees success labels.

mod features;
mod logistic;

pub use features::{
    featurize, featurize_with, EmbeddingClient, Embedder, FeatureMode, FeatureSpec,
};
pub use logistic::{
    accuracy, fit_logistic, logistic_gradient, logistic_loss, sigmoid, train_logistic,
    train_on_examples, EmbeddedLogistic, LogisticPolicy, TrainHyper,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, Decision, PrefixView, Trajectory};
use crate::transport::{EndpointConfig, HttpClient, TransportError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("loss became non-finite at epoch {epoch}; try a learning rate below {learning_rate}")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error("trajectory {problem_id}: {message}")]
    Structural { problem_id: String, message: String },
    /// The confidence source failed; rollouts treat this as a continue.
    #[error("confidence source failed at prefix {prefix_len}: {message}")]
    Confidence { prefix_len: usize, message: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub trait Policy: Send + Sync {
    fn name(&self) -> String;
    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn name(&self) -> String {
        (**self).name()
    }
    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        (**self).decide(view)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        (**self).decide(view)
    }
}

fn hard(terminate: bool) -> Decision {
    Decision {
        action: if terminate {
            Action::Terminate
        } else {
            Action::Continue
        },
        p_terminate: if terminate { 1.0 } else { 0.0 },
        rationale: None,
        confidence: None,
    }
}

/// Stops after exactly `k` observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedBudget {
    k: usize,
}

impl FixedBudget {
    pub fn new(k: usize) -> Result<Self, PolicyError> {
        if k == 0 {
            return Err(PolicyError::Precondition("budget must be at least 1".into()));
        }
        Ok(Self { k })
    }

    pub fn budget(&self) -> usize {
        self.k
    }
}

impl Policy for FixedBudget {
    fn name(&self) -> String {
        format!("fixed:{}", self.k)
    }

    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        Ok(hard(view.prefix_len() >= self.k))
    }
}

pub type ConfidenceFn = dyn Fn(&PrefixView<'_>) -> Result<f64, String> + Send + Sync;

/// Terminates once a confidence score reaches `theta`.
pub struct ThresholdPolicy {
    confidence: Box<ConfidenceFn>,
    theta: f64,
}

impl ThresholdPolicy {
    pub fn new(
        confidence: impl Fn(&PrefixView<'_>) -> Result<f64, String> + Send + Sync + 'static,
        theta: f64,
    ) -> Result<Self, PolicyError> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(PolicyError::Precondition(format!(
                "theta {theta} outside (0, 1]"
            )));
        }
        Ok(Self {
            confidence: Box::new(confidence),
            theta,
        })
    }
}

impl Policy for ThresholdPolicy {
    fn name(&self) -> String {
        format!("threshold:{}", self.theta)
    }

    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        let c = (self.confidence)(view).map_err(|message| PolicyError::Confidence {
            prefix_len: view.prefix_len(),
            message,
        })?;
        let mut d = hard(c >= self.theta);
        d.confidence = Some(c);
        Ok(d)
    }
}

const TIE_EPS: f64 = 1e-12;

/// Brute-force maximizer of `gamma^t * p_term(t)` over `t = 1..=T`, earliest
/// `t` on ties.
pub fn oracle_stop_index(t: &Trajectory, gamma: f64) -> Result<usize, PolicyError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(PolicyError::Precondition(format!("gamma {gamma} outside (0, 1]")));
    }
    if t.is_empty() {
        return Err(PolicyError::Structural {
            problem_id: t.problem_id.clone(),
            message: "no observations".into(),
        });
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for step in 1..=t.len() {
        let p = t
            .label(step)
            .ok_or_else(|| PolicyError::Structural {
                problem_id: t.problem_id.clone(),
                message: format!("prefix {step} is unlabeled"),
            })?
            .p_term;
        let value = gamma.powi(step as i32) * p;
        // Values equal up to rounding are ties; the earlier step keeps them.
        if best.0 == 0 || value > best.1 + TIE_EPS * best.1.abs() {
            best = (step, value);
        }
    }
    Ok(best.0)
}

/// Label-reading reference policy: stops every known trajectory at its
/// discounted-optimal index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePolicy {
    gamma: f64,
    stops: BTreeMap<String, usize>,
}

impl OraclePolicy {
    pub fn new(trajectories: &[Trajectory], gamma: f64) -> Result<Self, PolicyError> {
        let stops = trajectories
            .iter()
            .map(|t| Ok((t.problem_id.clone(), oracle_stop_index(t, gamma)?)))
            .collect::<Result<_, PolicyError>>()?;
        Ok(Self { gamma, stops })
    }

    pub fn stop_for(&self, problem_id: &str) -> Option<usize> {
        self.stops.get(problem_id).copied()
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        format!("oracle(gamma={})", self.gamma)
    }

    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        let stop = self.stop_for(view.problem_id).ok_or_else(|| PolicyError::Structural {
            problem_id: view.problem_id.to_string(),
            message: "not among the oracle's trajectories".into(),
        })?;
        Ok(hard(view.prefix_len() >= stop))
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    observations: &'a [crate::domain::Observation],
    prefix_len: usize,
}

#[derive(Deserialize)]
struct RemoteReply {
    p_terminate: f64,
    #[serde(default)]
    rationale: Option<String>,
}

/// Decision endpoint adapter: POST `{"observations", "prefix_len"}`, reply
/// `{"p_terminate", "rationale"?}`.
#[derive(Debug)]
pub struct RemotePolicy {
    client: HttpClient,
}

impl RemotePolicy {
    pub fn new(url: impl Into<String>, mut cfg: EndpointConfig) -> Result<Self, PolicyError> {
        cfg.url = Some(url.into());
        Ok(Self {
            client: HttpClient::new(cfg)?,
        })
    }
}

impl Policy for RemotePolicy {
    fn name(&self) -> String {
        format!("remote:{}", self.client.config().url.as_deref().unwrap_or(""))
    }

    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        let reply: RemoteReply = self.client.post_json(&RemoteRequest {
            observations: view.observations,
            prefix_len: view.prefix_len(),
        })?;
        if !(0.0..=1.0).contains(&reply.p_terminate) {
            return Err(PolicyError::Unsupported(format!(
                "remote policy returned p_terminate {}",
                reply.p_terminate
            )));
        }
        let mut d = Decision::from_probability(reply.p_terminate);
        d.rationale = reply.rationale;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, Observation, ObservationKind, PrefixLabel};

    fn traj(ps: &[f64]) -> Trajectory {
        Trajectory {
            problem_id: "o".into(),
            ground_truth: "y".into(),
            domain: Domain::Medical,
            observations: (0..ps.len())
                .map(|i| Observation::with_text(i, ObservationKind::QuestionAnswer, "x"))
                .collect(),
            labels: ps
                .iter()
                .enumerate()
                .map(|(i, &p)| PrefixLabel::terminate_only(i + 1, p, 50))
                .collect(),
            baseline_label: None,
        }
    }

    #[test]
    fn fixed_budget() {
        let t = traj(&[0.0; 5]);
        let p = FixedBudget::new(3).unwrap();
        assert_eq!(p.decide(&t.view(2)).unwrap().action, Action::Continue);
        assert_eq!(p.decide(&t.view(3)).unwrap().action, Action::Terminate);
        let one = FixedBudget::new(1).unwrap();
        assert_eq!(one.decide(&t.view(1)).unwrap().action, Action::Terminate);
        assert!(FixedBudget::new(0).is_err());
    }

    #[test]
    fn threshold_crossing() {
        let t = traj(&[0.0; 3]);
        let conf = [0.2, 0.5, 0.85];
        let p = ThresholdPolicy::new(move |v| Ok(conf[v.prefix_len() - 1]), 0.8).unwrap();
        let actions: Vec<_> = (1..=3).map(|k| p.decide(&t.view(k)).unwrap().action).collect();
        assert_eq!(actions, [Action::Continue, Action::Continue, Action::Terminate]);
        assert_eq!(p.decide(&t.view(3)).unwrap().confidence, Some(0.85));

        let edge = ThresholdPolicy::new(|_| Ok(1.0), 1.0).unwrap();
        assert_eq!(edge.decide(&t.view(1)).unwrap().action, Action::Terminate);
        assert!(ThresholdPolicy::new(|_| Ok(1.0), 0.0).is_err());
        assert!(ThresholdPolicy::new(|_| Ok(1.0), 1.1).is_err());
    }

    #[test]
    fn threshold_fault_is_reported() {
        let t = traj(&[0.0; 3]);
        let p = ThresholdPolicy::new(|_| Err("offline".to_string()), 0.8).unwrap();
        assert!(matches!(
            p.decide(&t.view(2)),
            Err(PolicyError::Confidence { prefix_len: 2, .. })
        ));
    }

    #[test]
    fn oracle_argmax() {
        let t = traj(&[0.1, 0.2, 0.8, 0.75]);
        assert_eq!(oracle_stop_index(&t, 1.0).unwrap(), 3);
        assert_eq!(oracle_stop_index(&t, 0.9).unwrap(), 3);
        let flat = traj(&[0.4; 6]);
        assert_eq!(oracle_stop_index(&flat, 0.99).unwrap(), 1);
        assert_eq!(oracle_stop_index(&flat, 1.0).unwrap(), 1);
        let mut unlabeled = traj(&[0.4; 3]);
        unlabeled.labels.pop();
        assert!(oracle_stop_index(&unlabeled, 1.0).is_err());
        assert!(oracle_stop_index(&flat, 0.0).is_err());
    }

    #[test]
    fn oracle_policy_stops_at_argmax() {
        let t = traj(&[0.1, 0.2, 0.8, 0.75]);
        let p = OraclePolicy::new(std::slice::from_ref(&t), 1.0).unwrap();
        assert_eq!(p.decide(&t.view(2)).unwrap().action, Action::Continue);
        assert_eq!(p.decide(&t.view(3)).unwrap().action, Action::Terminate);
    }
}
