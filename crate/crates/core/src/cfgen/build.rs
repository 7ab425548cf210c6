use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment_confidence, augment_rationale, RationaleProvider};
use super::balance::{balance_dataset, BalanceParams};
use super::counterfactual::{make_counterfactual_math, make_counterfactual_medical, maybe_features, CfParams, Perturber};
use super::{detect_breakpoint, detect_math_breakpoint, CfError, DatasetManifest};
use crate::domain::{
    Action, CounterfactualEdit, CounterfactualPair, Domain, Provenance, TerminationExample, Trajectory,
};
use crate::labeling::SuccessProvider;
use crate::policy::FeatureSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub cf: CfParams,
    pub continue_ratio: f64,
    pub seed: u64,
    /// Steps back from a math breakpoint for the continue example.
    pub math_offset: usize,
    pub marker_list_hash: String,
    pub feature_spec: Option<FeatureSpec>,
    pub confidence: bool,
    pub rationale_retries: u32,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            cf: CfParams::default(),
            continue_ratio: 0.8,
            seed: 0,
            math_offset: 1,
            marker_list_hash: String::new(),
            feature_spec: None,
            confidence: false,
            rationale_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub manifest: DatasetManifest,
    pub pairs: Vec<CounterfactualPair>,
    /// Trajectories without a breakpoint.
    pub no_breakpoint: Vec<String>,
}

enum PairResult {
    Pair(Box<CounterfactualPair>),
    NoBreakpoint,
    Skipped,
}

fn math_pair(t: &Trajectory, params: &BuildParams) -> Result<PairResult, CfError> {
    let Some(i) = detect_math_breakpoint(&t.labels).map_err(|e| match e {
        CfError::Structural { message, .. } => CfError::Structural {
            problem_id: t.problem_id.clone(),
            message,
        },
        other => other,
    })?
    else {
        return Ok(PairResult::NoBreakpoint);
    };
    let stop = t.labels[i].prefix_len;
    let negative = match make_counterfactual_math(t, stop, params.math_offset, params.cf.horizon) {
        Ok(e) => e,
        Err(CfError::Range(msg)) => {
            log::info!("{}: no earlier prefix ({msg})", t.problem_id);
            return Ok(PairResult::Skipped);
        }
        Err(e) => return Err(e),
    };
    let mut positive = TerminationExample::new(
        t.problem_id.clone(),
        stop,
        Action::Terminate,
        Provenance::OriginalTerminate,
    );
    positive.p_term = Some(t.labels[i].p_term);
    positive.features = maybe_features(&t.observations[..stop], params.cf.horizon);
    Ok(PairResult::Pair(Box::new(CounterfactualPair {
        edit: CounterfactualEdit::Span {
            start: negative.prefix_len,
            end: stop,
        },
        positive,
        negative,
        attempts_used: 0,
    })))
}

fn pair_for(
    t: &Trajectory,
    provider: &dyn SuccessProvider,
    perturber: Option<&dyn Perturber>,
    params: &BuildParams,
) -> Result<PairResult, CfError> {
    if t.domain == Domain::Math {
        return math_pair(t, params);
    }
    let Some(bp) = detect_breakpoint(&t.labels, params.cf.jump, t.baseline_label.as_ref()) else {
        return Ok(PairResult::NoBreakpoint);
    };
    let perturber = perturber.ok_or_else(|| {
        CfError::Precondition(format!("{} domain needs a perturber", t.domain))
    })?;
    match make_counterfactual_medical(t, bp, perturber, provider, &params.cf, params.seed) {
        Ok(pair) => Ok(PairResult::Pair(Box::new(pair))),
        Err(CfError::CfExhausted { problem_id, attempts }) => {
            log::warn!("{problem_id}: counterfactual search exhausted after {attempts} attempts; pair skipped");
            Ok(PairResult::Skipped)
        }
        Err(e) => Err(e),
    }
}

/// Breakpoints, counterfactual pairs, balancing, then optional annotation.
/// Pairs are built in parallel; everything after is a sequential reduction
/// in input order, so the manifest depends only on inputs and seed.
pub fn build_manifest(
    trajectories: &[Trajectory],
    provider: &dyn SuccessProvider,
    perturber: Option<&dyn Perturber>,
    rationale: Option<&dyn RationaleProvider>,
    params: &BuildParams,
) -> Result<BuildOutcome, CfError> {
    let results: Vec<Result<PairResult, CfError>> = trajectories
        .par_iter()
        .map(|t| pair_for(t, provider, perturber, params))
        .collect();

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    let mut no_breakpoint = Vec::new();
    for (t, r) in trajectories.iter().zip(results) {
        match r? {
            PairResult::Pair(p) => pairs.push(*p),
            PairResult::NoBreakpoint => no_breakpoint.push(t.problem_id.clone()),
            PairResult::Skipped => skipped.push(t.problem_id.clone()),
        }
    }
    if pairs.is_empty() {
        log::warn!("no counterfactual pairs from {} trajectories", trajectories.len());
    }

    let examples: Vec<TerminationExample> = pairs
        .iter()
        .flat_map(|p| [p.positive.clone(), p.negative.clone()])
        .collect();
    let balance = BalanceParams {
        continue_ratio: params.continue_ratio,
        seed: params.seed,
        jump_threshold: params.cf.jump,
        low_threshold: params.cf.low,
        marker_list_hash: params.marker_list_hash.clone(),
        feature_spec: params.feature_spec.clone(),
        n_pairs: pairs.len(),
        skipped,
    };
    let mut manifest = balance_dataset(examples, trajectories, &balance)?;

    if rationale.is_some() || params.confidence {
        let by_id: std::collections::BTreeMap<&str, &Trajectory> =
            trajectories.iter().map(|t| (t.problem_id.as_str(), t)).collect();
        let examples = std::mem::take(&mut manifest.examples);
        let annotated: Vec<Result<TerminationExample, CfError>> = examples
            .into_par_iter()
            .map(|mut e| {
                if let Some(r) = rationale {
                    let t = by_id[e.problem_id.as_str()];
                    let obs = e.prefix_observations(t).ok_or_else(|| CfError::Structural {
                        problem_id: e.problem_id.clone(),
                        message: format!("prefix {} out of range", e.prefix_len),
                    })?;
                    e = augment_rationale(e, &obs, r, params.rationale_retries)?;
                }
                if params.confidence {
                    if let Some(p) = e.p_term {
                        e = augment_confidence(e, p)?;
                    }
                }
                Ok(e)
            })
            .collect();
        manifest.examples = annotated.into_iter().collect::<Result<_, _>>()?;
    }
    Ok(BuildOutcome {
        manifest,
        pairs,
        no_breakpoint,
    })
}
