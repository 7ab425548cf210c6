use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{jump_at, CfError, JUMP_EPS};
use crate::domain::{
    Action, CounterfactualEdit, CounterfactualPair, Observation, Provenance, TerminationExample,
    Trajectory,
};
use crate::labeling::{
    estimate_query, Outcome, ProviderError, SuccessProvider, SuccessQuery, SynthPerturber,
};
use crate::policy::featurize;
use crate::seeding::stream;
use crate::transport::{EndpointConfig, HttpClient};

/// Regenerates the observation at `index` (the last step of a prefix).
pub trait Perturber: Send + Sync {
    fn perturb(
        &self,
        t: &Trajectory,
        index: usize,
        attempt: u32,
        seed: u64,
    ) -> Result<Observation, ProviderError>;
}

impl Perturber for SynthPerturber {
    fn perturb(
        &self,
        t: &Trajectory,
        index: usize,
        attempt: u32,
        seed: u64,
    ) -> Result<Observation, ProviderError> {
        let attempt_seed = stream(seed, "cf/attempt", &[&attempt.to_le_bytes()]).random::<u64>();
        self.env.perturb(t, index, attempt_seed)
    }
}

/// Perturbation endpoint: POST `{"problem_id", "observations", "index",
/// "attempt"}` with the prefix up to and including `index`; reply
/// `{"observation": {...}}`.
#[derive(Debug)]
pub struct RemotePerturber {
    client: HttpClient,
}

impl RemotePerturber {
    pub fn new(url: impl Into<String>, mut cfg: EndpointConfig) -> Result<Self, ProviderError> {
        cfg.url = Some(url.into());
        Ok(Self {
            client: HttpClient::new(cfg)?,
        })
    }
}

#[derive(Serialize)]
struct PerturbRequest<'a> {
    problem_id: &'a str,
    observations: &'a [Observation],
    index: usize,
    attempt: u32,
}

#[derive(Deserialize)]
struct PerturbReply {
    observation: Observation,
}

impl Perturber for RemotePerturber {
    fn perturb(
        &self,
        t: &Trajectory,
        index: usize,
        attempt: u32,
        _seed: u64,
    ) -> Result<Observation, ProviderError> {
        let reply: PerturbReply = self.client.post_json(&PerturbRequest {
            problem_id: &t.problem_id,
            observations: &t.observations[..=index],
            index,
            attempt,
        })?;
        let mut obs = reply.observation;
        obs.index = index;
        Ok(obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfParams {
    pub jump: f64,
    /// Relabeled success must fall strictly below this.
    pub low: f64,
    pub max_attempts: u32,
    pub n_samples: u32,
    /// Horizon for the prefix-length feature; features are attached when the
    /// observations carry vectors.
    pub horizon: usize,
}

impl Default for CfParams {
    fn default() -> Self {
        Self {
            jump: 0.5,
            low: 0.3,
            max_attempts: 8,
            n_samples: 50,
            horizon: 20,
        }
    }
}

pub(crate) fn maybe_features(observations: &[Observation], horizon: usize) -> Option<Vec<f64>> {
    if observations.iter().all(|o| o.features.is_some()) {
        featurize(observations, horizon).ok()
    } else {
        None
    }
}

/// Pairs the terminate prefix ending at breakpoint `bp` (0-based label
/// index) with a copy whose observation `bp` is regenerated until the
/// relabeled success drops below `params.low`.
pub fn make_counterfactual_medical(
    t: &Trajectory,
    bp: usize,
    perturber: &dyn Perturber,
    provider: &dyn SuccessProvider,
    params: &CfParams,
    seed: u64,
) -> Result<CounterfactualPair, CfError> {
    let not_bp = || CfError::NotABreakpoint {
        problem_id: t.problem_id.clone(),
        index: bp,
    };
    if !t.is_densely_labeled() {
        return Err(CfError::Structural {
            problem_id: t.problem_id.clone(),
            message: "counterfactual search needs every prefix labeled".into(),
        });
    }
    let rise = jump_at(&t.labels, bp, t.baseline_label.as_ref()).ok_or_else(not_bp)?;
    if rise < params.jump - JUMP_EPS {
        return Err(not_bp());
    }

    let prefix_len = bp + 1;
    let original = &t.observations[..prefix_len];
    let mut positive = TerminationExample::new(
        t.problem_id.clone(),
        prefix_len,
        Action::Terminate,
        Provenance::OriginalTerminate,
    );
    positive.p_term = Some(t.labels[bp].p_term);
    positive.features = maybe_features(original, params.horizon);

    for attempt in 1..=params.max_attempts {
        let replacement = perturber
            .perturb(t, bp, attempt, seed)
            .map_err(|source| CfError::Perturb {
                problem_id: t.problem_id.clone(),
                source,
            })?;
        let mut edited = original.to_vec();
        edited[bp] = replacement.clone();
        let q = SuccessQuery::with_observations(t, &edited);
        let p_cf = estimate_query(
            provider,
            &q,
            Outcome::Terminate,
            params.n_samples,
            seed,
            &format!("cf/{attempt}"),
        )?;
        if p_cf < params.low {
            let mut negative = TerminationExample::new(
                t.problem_id.clone(),
                prefix_len,
                Action::Continue,
                Provenance::CounterfactualContinue,
            );
            negative.p_term = Some(p_cf);
            negative.features = maybe_features(&edited, params.horizon);
            negative.substitution = Some(replacement);
            return Ok(CounterfactualPair {
                positive,
                negative,
                edit: CounterfactualEdit::Index(bp),
                attempts_used: attempt,
            });
        }
        log::debug!(
            "{}: attempt {attempt} relabeled at {p_cf:.3} (need < {})",
            t.problem_id,
            params.low
        );
    }
    Err(CfError::CfExhausted {
        problem_id: t.problem_id.clone(),
        attempts: params.max_attempts,
    })
}

/// Continue example at the earlier prefix `bp_prefix_len - offset`, where
/// `bp_prefix_len` is the 1-based length of the terminate prefix.
pub fn make_counterfactual_math(
    t: &Trajectory,
    bp_prefix_len: usize,
    offset: usize,
    horizon: usize,
) -> Result<TerminationExample, CfError> {
    if bp_prefix_len == 0 || bp_prefix_len > t.len() {
        return Err(CfError::Range(format!(
            "breakpoint prefix {bp_prefix_len} outside 1..={}",
            t.len()
        )));
    }
    if offset == 0 || offset >= bp_prefix_len {
        return Err(CfError::Range(format!(
            "offset {offset} must lie in 1..{bp_prefix_len} so the earlier prefix is non-empty"
        )));
    }
    let prefix_len = bp_prefix_len - offset;
    let mut e = TerminationExample::new(
        t.problem_id.clone(),
        prefix_len,
        Action::Continue,
        Provenance::EarlierPrefixContinue,
    );
    e.p_term = t.label(prefix_len).map(|l| l.p_term);
    e.features = maybe_features(&t.observations[..prefix_len], horizon);
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{SynthConfig, SynthEnv};

    fn env() -> SynthEnv {
        SynthEnv::new(SynthConfig {
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn labeled(env: &SynthEnv, i: usize) -> Trajectory {
        env.label(&[env.trajectory(i)], 0).unwrap().remove(0)
    }

    struct KeyAgain;
    impl Perturber for KeyAgain {
        fn perturb(&self, t: &Trajectory, index: usize, _: u32, _: u64) -> Result<Observation, ProviderError> {
            Ok(t.observations[index].clone())
        }
    }

    #[test]
    fn synthetic_counterfactual_first_attempt() {
        let env = env();
        let t = labeled(&env, 2);
        let bp = super::super::detect_breakpoint(&t.labels, 0.5, t.baseline_label.as_ref()).unwrap();
        assert_eq!(t.observations[bp].is_key, Some(true));
        let perturber = SynthPerturber { env: env.clone() };
        let pair = make_counterfactual_medical(&t, bp, &perturber, &env.oracle(), &CfParams::default(), 9).unwrap();
        assert_eq!(pair.attempts_used, 1);
        assert_eq!(pair.negative.p_term, Some(0.1));
        assert_eq!(pair.positive.decision, Action::Terminate);
        assert_eq!(pair.negative.decision, Action::Continue);
        assert_eq!(pair.edit, CounterfactualEdit::Index(bp));
        let pos = pair.positive.prefix_observations(&t).unwrap();
        let neg = pair.negative.prefix_observations(&t).unwrap();
        let diffs = pos.iter().zip(&neg).filter(|(a, b)| a != b).count();
        assert_eq!(diffs, 1);
        assert_eq!(pair.positive.features.as_ref().unwrap().len(), 17);
    }

    #[test]
    fn stubborn_perturber_exhausts() {
        let env = env();
        let t = labeled(&env, 2);
        let bp = super::super::detect_breakpoint(&t.labels, 0.5, t.baseline_label.as_ref()).unwrap();
        let err = make_counterfactual_medical(&t, bp, &KeyAgain, &env.oracle(), &CfParams::default(), 9).unwrap_err();
        assert!(matches!(err, CfError::CfExhausted { attempts: 8, .. }));
    }

    #[test]
    fn non_breakpoint_is_rejected() {
        let env = env();
        let t = labeled(&env, 2);
        let bp = super::super::detect_breakpoint(&t.labels, 0.5, t.baseline_label.as_ref()).unwrap();
        let perturber = SynthPerturber { env: env.clone() };
        let err = make_counterfactual_medical(&t, bp + 1, &perturber, &env.oracle(), &CfParams::default(), 9).unwrap_err();
        assert!(matches!(err, CfError::NotABreakpoint { .. }));
    }

    #[test]
    fn math_offsets() {
        let env = env();
        let t = env.trajectory(0);
        let e = make_counterfactual_math(&t, 5, 2, 20).unwrap();
        assert_eq!(e.prefix_len, 3);
        assert_eq!(e.provenance, Provenance::EarlierPrefixContinue);
        assert_eq!(make_counterfactual_math(&t, 5, 1, 20).unwrap().prefix_len, 4);
        assert!(matches!(make_counterfactual_math(&t, 5, 5, 20), Err(CfError::Range(_))));
        assert!(matches!(make_counterfactual_math(&t, 5, 6, 20), Err(CfError::Range(_))));
        assert!(matches!(make_counterfactual_math(&t, 5, 0, 20), Err(CfError::Range(_))));
    }
}
