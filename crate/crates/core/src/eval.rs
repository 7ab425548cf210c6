//! Rollouts and metrics. `stop_index` is 1-based: the number of observations
//! the policy had seen when it terminated.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfgen::{detect_breakpoint, detect_math_breakpoint, DatasetManifest};
use crate::domain::{
    Action, Domain, EvalReport, PrefixLabel, Provenance, Rollout, Trajectory,
};
use crate::policy::{fit_logistic, sigmoid, Policy, PolicyError, TrainHyper};
use crate::seeding::{item_stream, stream};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy failed on {problem_id} at prefix {step}: {source}")]
    Policy {
        problem_id: String,
        step: usize,
        #[source]
        source: PolicyError,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("trajectory {problem_id}: {message}")]
    Structural { problem_id: String, message: String },
    #[error("empty population: {0}")]
    EmptyPopulation(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Terminate when `p_terminate >= 0.5`.
    Deterministic,
    /// Terminate with probability `p_terminate`.
    Sampled,
}

fn structural(t: &Trajectory, message: impl Into<String>) -> EvalError {
    EvalError::Structural {
        problem_id: t.problem_id.clone(),
        message: message.into(),
    }
}

fn p_at(t: &Trajectory, prefix_len: usize) -> Result<f64, EvalError> {
    t.label(prefix_len)
        .map(|l| l.p_term)
        .ok_or_else(|| structural(t, format!("prefix {prefix_len} is unlabeled")))
}

/// Feeds prefixes `1..=horizon` until the policy terminates. Without a
/// terminate decision the rollout is forced to stop at `horizon`. Confidence
/// faults are recorded and treated as continue; other policy errors abort.
pub fn rollout(
    policy: &dyn Policy,
    t: &Trajectory,
    mode: RolloutMode,
    horizon: usize,
    seed: u64,
) -> Result<Rollout, EvalError> {
    if horizon == 0 || horizon > t.len() {
        return Err(EvalError::Precondition(format!(
            "horizon {horizon} outside 1..={} for {}",
            t.len(),
            t.problem_id
        )));
    }
    let mut per_step = Vec::with_capacity(horizon);
    let mut faults = Vec::new();
    let mut stop = None;
    for step in 1..=horizon {
        let view = t.view(step);
        let d = match policy.decide(&view) {
            Ok(d) => d,
            Err(PolicyError::Confidence { message, .. }) => {
                log::warn!("{} step {step}: {message}; continuing", t.problem_id);
                faults.push(step);
                per_step.push(0.0);
                continue;
            }
            Err(source) => {
                return Err(EvalError::Policy {
                    problem_id: t.problem_id.clone(),
                    step,
                    source,
                })
            }
        };
        per_step.push(d.p_terminate);
        let terminate = match mode {
            RolloutMode::Deterministic => d.action == Action::Terminate,
            RolloutMode::Sampled => {
                let mut rng = item_stream(seed, "rollout", &t.problem_id, step as u64);
                rng.random::<f64>() < d.p_terminate
            }
        };
        if terminate {
            stop = Some(step);
            break;
        }
    }
    let (stop_index, forced) = match stop {
        Some(s) => (s, false),
        None => (horizon, true),
    };
    Ok(Rollout {
        problem_id: t.problem_id.clone(),
        stop_index,
        forced,
        success_at_stop: p_at(t, stop_index)?,
        per_step_p_terminate: per_step,
        faults,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean success at the stopping prefix. Summed in `problem_id` order so the
/// result does not depend on rollout order.
pub fn frq_sr(rollouts: &[Rollout]) -> Result<f64, EvalError> {
    mean(sorted(rollouts).into_iter().map(|r| r.success_at_stop))
        .ok_or_else(|| EvalError::EmptyPopulation("no rollouts".into()))
}

pub fn mean_stop_index(rollouts: &[Rollout]) -> Result<f64, EvalError> {
    mean(rollouts.iter().map(|r| r.stop_index as f64))
        .ok_or_else(|| EvalError::EmptyPopulation("no rollouts".into()))
}

/// Stop-index distribution of the mean-matched baseline:
/// `floor(m)` with weight `ceil(m) - m`, `ceil(m)` with weight `m - floor(m)`.
pub fn baseline_weights(m: f64) -> [(usize, f64); 2] {
    let lo = m.floor();
    let hi = m.ceil();
    if lo == hi {
        [(lo as usize, 1.0), (hi as usize, 0.0)]
    } else {
        [(lo as usize, hi - m), (hi as usize, m - lo)]
    }
}

/// Expected stop index of the baseline; equals `m` by construction.
pub fn baseline_expected_index(m: f64) -> f64 {
    baseline_weights(m).iter().map(|&(i, w)| i as f64 * w).sum()
}

/// Label at `prefix_len`, clamped into the trajectory's labeled range.
/// Sparse label lists fall back to the closest label at or below.
fn clamped_p(t: &Trajectory, prefix_len: usize) -> Result<f64, EvalError> {
    let first = t.labels.first().ok_or_else(|| structural(t, "no labels"))?;
    let last = t.labels.last().expect("non-empty");
    let idx = if prefix_len > last.prefix_len {
        log::debug!(
            "{}: baseline index {prefix_len} clamped to {}",
            t.problem_id,
            last.prefix_len
        );
        last.prefix_len
    } else {
        prefix_len.max(first.prefix_len)
    };
    if let Some(l) = t.label(idx) {
        return Ok(l.p_term);
    }
    Ok(t.labels
        .iter()
        .rev()
        .find(|l| l.prefix_len <= idx)
        .unwrap_or(first)
        .p_term)
}

fn index_by_id(trajectories: &[Trajectory]) -> BTreeMap<&str, &Trajectory> {
    trajectories.iter().map(|t| (t.problem_id.as_str(), t)).collect()
}

fn lookup<'a>(by_id: &BTreeMap<&str, &'a Trajectory>, id: &str) -> Result<&'a Trajectory, EvalError> {
    by_id.get(id).copied().ok_or_else(|| EvalError::Structural {
        problem_id: id.to_string(),
        message: "rollout has no matching trajectory".into(),
    })
}

/// Success of the baseline that stops every trajectory at the rollouts'
/// mean stop index (randomly rounded, computed in closed form).
pub fn baseline_sr(rollouts: &[Rollout], trajectories: &[Trajectory]) -> Result<f64, EvalError> {
    let m = mean_stop_index(rollouts)?;
    let weights = baseline_weights(m);
    let by_id = index_by_id(trajectories);
    let mut total = 0.0;
    for r in sorted(rollouts) {
        let t = lookup(&by_id, &r.problem_id)?;
        for &(idx, w) in &weights {
            if w > 0.0 {
                total += w * clamped_p(t, idx)?;
            }
        }
    }
    Ok(total / rollouts.len() as f64)
}

/// FRQ SR minus the mean-matched baseline's SR.
pub fn diff_from_mean(rollouts: &[Rollout], trajectories: &[Trajectory]) -> Result<f64, EvalError> {
    Ok(frq_sr(rollouts)? - baseline_sr(rollouts, trajectories)?)
}

fn sorted(rollouts: &[Rollout]) -> Vec<&Rollout> {
    let mut v: Vec<&Rollout> = rollouts.iter().collect();
    v.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    v
}

/// 1-based prefix length at which terminating first becomes right, if any.
pub fn optimal_stop(t: &Trajectory, jump: f64) -> Result<Option<usize>, EvalError> {
    let idx = match t.domain {
        Domain::Math => detect_math_breakpoint(&t.labels)
            .map_err(|e| structural(t, e.to_string()))?,
        _ => detect_breakpoint(&t.labels, jump, t.baseline_label.as_ref()),
    };
    Ok(idx.map(|i| t.labels[i].prefix_len))
}

fn otr_hits(rollouts: &[Rollout], trajectories: &[Trajectory], jump: f64) -> Result<Vec<f64>, EvalError> {
    let by_id = index_by_id(trajectories);
    let mut hits = Vec::new();
    for r in sorted(rollouts) {
        let t = lookup(&by_id, &r.problem_id)?;
        if let Some(stop) = optimal_stop(t, jump)? {
            hits.push(if r.stop_index == stop { 1.0 } else { 0.0 });
        }
    }
    Ok(hits)
}

/// Fraction of breakpoint trajectories stopped exactly at the breakpoint, and
/// the size of that population. The rate is `None` when nothing has one.
pub fn otr(rollouts: &[Rollout], trajectories: &[Trajectory], jump: f64) -> Result<(Option<f64>, usize), EvalError> {
    let hits = otr_hits(rollouts, trajectories, jump)?;
    Ok((mean(hits.iter().copied()), hits.len()))
}

/// Mean of `gamma^stop_index * success_at_stop`.
pub fn discounted_return(rollouts: &[Rollout], gamma: f64) -> Result<f64, EvalError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EvalError::Precondition(format!("gamma {gamma} outside (0, 1]")));
    }
    mean(
        sorted(rollouts)
            .into_iter()
            .map(|r| gamma.powi(r.stop_index as i32) * r.success_at_stop),
    )
    .ok_or_else(|| EvalError::EmptyPopulation("no rollouts".into()))
}

/// +1 for terminating at `p >= 0.5` or continuing at `p < 0.5`, else -1.
pub fn rl_reward(decision: Action, p_term: f64) -> i32 {
    let should_stop = p_term >= 0.5;
    if (decision == Action::Terminate) == should_stop {
        1
    } else {
        -1
    }
}

/// Percentile bootstrap of the mean (2.5th and 97.5th percentiles).
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64, tag: &str) -> Option<(f64, f64)> {
    if values.is_empty() || resamples == 0 {
        return None;
    }
    let mut rng = stream(seed, "bootstrap", &[tag.as_bytes()]);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Some((at(0.025), at(0.975)))
}

/// Per-prefix termination probabilities without stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCurve {
    pub problem_id: String,
    pub p_terminate: Vec<f64>,
    /// Step and message of the first policy failure; the curve ends before it.
    pub fault: Option<(usize, String)>,
}

impl TermCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("prefix_len,p_terminate\n");
        for (i, p) in self.p_terminate.iter().enumerate() {
            out.push_str(&format!("{},{p}\n", i + 1));
        }
        out
    }
}

pub fn term_rate_curve(policy: &dyn Policy, t: &Trajectory) -> TermCurve {
    let mut p_terminate = Vec::with_capacity(t.len());
    let mut fault = None;
    for step in 1..=t.len() {
        match policy.decide(&t.view(step)) {
            Ok(d) => p_terminate.push(d.p_terminate),
            Err(e) => {
                fault = Some((step, e.to_string()));
                break;
            }
        }
    }
    TermCurve {
        problem_id: t.problem_id.clone(),
        p_terminate,
        fault,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub train_acc: f64,
    pub test_acc: f64,
    /// `(train_fraction, seed)`.
    pub split: (f64, u64),
    pub n_train: usize,
    pub n_test: usize,
}

/// Shuffled `floor(train_fraction * n)` / rest split, logistic fit on the
/// train part, accuracy on both.
pub fn probe_split_lr(
    features: &[Vec<f64>],
    labels: &[bool],
    train_fraction: f64,
    seed: u64,
) -> Result<ProbeReport, EvalError> {
    let n = features.len();
    if n != labels.len() {
        return Err(EvalError::Precondition(format!("{n} vectors for {} labels", labels.len())));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::Precondition(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos < 2 || n - pos < 2 {
        return Err(EvalError::DegenerateDataset(format!(
            "need two examples per class ({pos} positive, {} negative)",
            n - pos
        )));
    }
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(EvalError::Precondition(format!(
            "split of {n} at {train_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "probe", &[]));
    let (train, test) = order.split_at(n_train);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (
            idx.iter().map(|&i| features[i].clone()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (xs, ys) = pick(train);
    let (w, b) = fit_logistic(&xs, &ys, &TrainHyper::default()).map_err(|e| match e {
        PolicyError::DegenerateDataset(m) => EvalError::DegenerateDataset(format!("train split: {m}")),
        other => EvalError::Precondition(other.to_string()),
    })?;
    let acc = |xs: &[Vec<f64>], ys: &[bool]| {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| {
                let z: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + b;
                (sigmoid(z) >= 0.5) == y
            })
            .count();
        hits as f64 / xs.len() as f64
    };
    let (txs, tys) = pick(test);
    Ok(ProbeReport {
        train_acc: acc(&xs, &ys),
        test_acc: acc(&txs, &tys),
        split: (train_fraction, seed),
        n_train,
        n_test: n - n_train,
    })
}

/// One RL training record: a prefix, the dataset's decision, and its reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlRecord {
    pub problem_id: String,
    pub prefix_len: usize,
    pub decision: Action,
    pub provenance: Provenance,
    pub p_term: f64,
    pub reward: i32,
    /// The decision disagrees with the label's side of 0.5.
    pub inconsistent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution: Option<crate::domain::Observation>,
}

/// Pairs every manifest example with its reward. Substituted prefixes use
/// the example's own relabeled `p_term`; others read the trajectory label.
pub fn export_rl_dataset(manifest: &DatasetManifest, trajectories: &[Trajectory]) -> Result<Vec<RlRecord>, EvalError> {
    let by_id = index_by_id(trajectories);
    manifest
        .examples
        .iter()
        .map(|e| {
            let t = lookup(&by_id, &e.problem_id)?;
            let p = if e.substitution.is_some() {
                e.p_term
            } else {
                t.label(e.prefix_len).map(|l: &PrefixLabel| l.p_term).or(e.p_term)
            }
            .ok_or_else(|| structural(t, format!("prefix {} is unlabeled", e.prefix_len)))?;
            let reward = rl_reward(e.decision, p);
            if reward < 0 {
                log::warn!(
                    "{}@{}: {} example has p_term {p}",
                    e.problem_id,
                    e.prefix_len,
                    e.decision
                );
            }
            Ok(RlRecord {
                problem_id: e.problem_id.clone(),
                prefix_len: e.prefix_len,
                decision: e.decision,
                provenance: e.provenance,
                p_term: p,
                reward,
                inconsistent: reward < 0,
                substitution: e.substitution.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: RolloutMode,
    /// Defaults to each trajectory's length.
    pub horizon: Option<usize>,
    pub gamma: f64,
    pub jump: f64,
    pub seed: u64,
    pub bootstrap_resamples: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: RolloutMode::Deterministic,
            horizon: None,
            gamma: 1.0,
            jump: 0.5,
            seed: 0,
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
        }
    }
}

/// Rolls `policy` over every trajectory (in parallel) and reduces the
/// metrics in `problem_id` order.
pub fn evaluate(policy: &dyn Policy, trajectories: &[Trajectory], opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::EmptyPopulation("no trajectories".into()));
    }
    let mut order: Vec<&Trajectory> = trajectories.iter().collect();
    order.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    let rollouts = order
        .par_iter()
        .map(|t| rollout(policy, t, opts.mode, opts.horizon.unwrap_or(t.len()).min(t.len()), opts.seed))
        .collect::<Result<Vec<_>, _>>()?;

    let successes: Vec<f64> = rollouts.iter().map(|r| r.success_at_stop).collect();
    let hits = otr_hits(&rollouts, trajectories, opts.jump)?;
    Ok(EvalReport {
        policy: policy.name(),
        frq_sr: frq_sr(&rollouts)?,
        frq_sr_ci: bootstrap_ci(&successes, opts.bootstrap_resamples, opts.seed, "frq_sr")
            .unwrap_or((f64::NAN, f64::NAN)),
        frq_sr_diff_from_mean: diff_from_mean(&rollouts, trajectories)?,
        otr: mean(hits.iter().copied()),
        otr_ci: bootstrap_ci(&hits, opts.bootstrap_resamples, opts.seed, "otr"),
        mean_stop_index: mean_stop_index(&rollouts)?,
        discounted_return: discounted_return(&rollouts, opts.gamma)?,
        gamma: opts.gamma,
        n_trajectories: rollouts.len(),
        n_with_breakpoint: hits.len(),
        n_forced: rollouts.iter().filter(|r| r.forced).count(),
        rollouts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Decision, Observation, ObservationKind, PrefixView};
    use crate::policy::{FixedBudget, ThresholdPolicy};

    fn traj(id: &str, ps: &[f64]) -> Trajectory {
        Trajectory {
            problem_id: id.into(),
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

    fn stopped(id: &str, stop: usize, p: f64) -> Rollout {
        Rollout {
            problem_id: id.into(),
            stop_index: stop,
            forced: false,
            success_at_stop: p,
            per_step_p_terminate: vec![],
            faults: vec![],
        }
    }

    struct Always(bool);
    impl Policy for Always {
        fn name(&self) -> String {
            format!("always:{}", self.0)
        }
        fn decide(&self, _: &PrefixView<'_>) -> Result<Decision, PolicyError> {
            Ok(Decision::from_probability(if self.0 { 1.0 } else { 0.0 }))
        }
    }

    #[test]
    fn rollout_edges() {
        let t = traj("a", &[0.1; 20]);
        let r = rollout(&Always(true), &t, RolloutMode::Deterministic, 20, 0).unwrap();
        assert_eq!((r.stop_index, r.forced), (1, false));
        let r = rollout(&Always(false), &t, RolloutMode::Deterministic, 20, 0).unwrap();
        assert_eq!((r.stop_index, r.forced), (20, true));
        assert_eq!(r.per_step_p_terminate.len(), 20);
        assert!(rollout(&Always(true), &t, RolloutMode::Deterministic, 21, 0).is_err());
    }

    #[test]
    fn rollout_threshold_crossing() {
        let t = traj("a", &[0.1, 0.2, 0.3]);
        let conf = [0.2, 0.5, 0.85];
        let p = ThresholdPolicy::new(move |v| Ok(conf[v.prefix_len() - 1]), 0.8).unwrap();
        let r = rollout(&p, &t, RolloutMode::Deterministic, 3, 0).unwrap();
        assert_eq!(r.stop_index, 3);
        assert_eq!(r.success_at_stop, 0.3);

        let never = ThresholdPolicy::new(|_| Ok(0.79), 0.8).unwrap();
        assert!(rollout(&never, &t, RolloutMode::Deterministic, 3, 0).unwrap().forced);
    }

    #[test]
    fn confidence_fault_continues() {
        let t = traj("a", &[0.1, 0.2, 0.3]);
        let p = ThresholdPolicy::new(
            |v| if v.prefix_len() == 1 { Err("down".into()) } else { Ok(0.9) },
            0.8,
        )
        .unwrap();
        let r = rollout(&p, &t, RolloutMode::Deterministic, 3, 0).unwrap();
        assert_eq!(r.faults, [1]);
        assert_eq!(r.stop_index, 2);
    }

    #[test]
    fn frq_sr_examples() {
        assert_eq!(frq_sr(&[stopped("a", 1, 0.8)]).unwrap(), 0.8);
        let mut f = stopped("b", 1, 1.0);
        f.forced = true;
        assert_eq!(frq_sr(&[stopped("a", 1, 0.0), f]).unwrap(), 0.5);
        assert!(frq_sr(&[]).is_err());
    }

    #[test]
    fn diff_from_mean_examples() {
        let t = traj("a", &[0.1, 0.2, 0.4, 0.8]);
        let d = diff_from_mean(&[stopped("a", 4, 0.8)], &[t]).unwrap();
        assert_eq!(d, 0.0);

        let a = traj("a", &[0.0, 0.0, 0.9, 0.9]);
        let b = traj("b", &[0.0, 0.0, 0.0, 0.9]);
        let rs = [stopped("a", 2, 0.0), stopped("b", 4, 0.9)];
        let trajs = [a, b];
        assert!((baseline_sr(&rs, &trajs).unwrap() - 0.45).abs() < 1e-12);
        assert!(diff_from_mean(&rs, &trajs).unwrap().abs() < 1e-12);
    }

    #[test]
    fn baseline_weights_preserve_mean() {
        let w = baseline_weights(2.4);
        assert_eq!(w[0].0, 2);
        assert!((w[0].1 - 0.6).abs() < 1e-12);
        assert_eq!(w[1].0, 3);
        assert!((w[1].1 - 0.4).abs() < 1e-12);
        assert!((baseline_expected_index(2.4) - 2.4).abs() < 1e-12);
        assert_eq!(baseline_weights(3.0), [(3, 1.0), (3, 0.0)]);
    }

    #[test]
    fn baseline_clamps_past_labels() {
        let a = traj("a", &[0.1, 0.9]);
        let b = traj("b", &[0.0, 0.0, 0.0, 0.0, 0.5, 0.6]);
        let rs = [stopped("a", 2, 0.9), stopped("b", 6, 0.6)];
        // m = 4: a clamps to its last label.
        assert!((baseline_sr(&rs, &[a, b]).unwrap() - 0.45).abs() < 1e-12);
    }

    #[test]
    fn otr_counts() {
        let a = traj("a", &[0.0, 0.8, 0.8]);
        let b = traj("b", &[0.0, 0.1, 0.9]);
        let flat = traj("c", &[0.2, 0.2, 0.2]);
        let trajs = [a, b, flat];
        let both = [stopped("a", 2, 0.8), stopped("b", 3, 0.9), stopped("c", 1, 0.2)];
        assert_eq!(otr(&both, &trajs, 0.5).unwrap(), (Some(1.0), 2));
        let none = [stopped("a", 1, 0.0), stopped("b", 2, 0.1)];
        assert_eq!(otr(&none, &trajs, 0.5).unwrap(), (Some(0.0), 2));
        let half = [stopped("a", 2, 0.8), stopped("b", 1, 0.0)];
        assert_eq!(otr(&half, &trajs, 0.5).unwrap(), (Some(0.5), 2));
        assert_eq!(otr(&[stopped("c", 1, 0.2)], &trajs, 0.5).unwrap(), (None, 0));
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[stopped("a", 2, 0.7)], 1.0).unwrap(), 0.7);
        assert!((discounted_return(&[stopped("a", 2, 0.7)], 0.9).unwrap() - 0.567).abs() < 1e-12);
        assert_eq!(discounted_return(&[stopped("a", 20, 0.0)], 0.5).unwrap(), 0.0);
        assert!(discounted_return(&[stopped("a", 2, 0.7)], 0.0).is_err());
    }

    #[test]
    fn reward_table() {
        assert_eq!(rl_reward(Action::Terminate, 0.6), 1);
        assert_eq!(rl_reward(Action::Continue, 0.6), -1);
        assert_eq!(rl_reward(Action::Terminate, 0.5), 1);
        assert_eq!(rl_reward(Action::Continue, 0.5), -1);
        assert_eq!(rl_reward(Action::Continue, 0.1), 1);
        assert_eq!(rl_reward(Action::Terminate, 0.2), -1);
    }

    #[test]
    fn curves() {
        let t = traj("a", &[0.0; 5]);
        assert_eq!(term_rate_curve(&Always(true), &t).p_terminate, [1.0; 5]);
        let c = term_rate_curve(&FixedBudget::new(3).unwrap(), &t);
        assert_eq!(c.p_terminate, [0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(c.to_csv().starts_with("prefix_len,p_terminate\n1,0\n"));
        let faulty = ThresholdPolicy::new(
            |v| if v.prefix_len() == 3 { Err("x".into()) } else { Ok(0.1) },
            0.8,
        )
        .unwrap();
        let c = term_rate_curve(&faulty, &t);
        assert_eq!(c.p_terminate.len(), 2);
        assert_eq!(c.fault.as_ref().unwrap().0, 3);
    }

    #[test]
    fn probe_split_sizes() {
        let xs: Vec<Vec<f64>> = (0..102).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }]).collect();
        let ys: Vec<bool> = (0..102).map(|i| i % 2 == 0).collect();
        let r = probe_split_lr(&xs, &ys, 0.7, 3).unwrap();
        assert_eq!((r.n_train, r.n_test), (71, 31));
        assert_eq!(r.test_acc, 1.0);
    }

    #[test]
    fn probe_without_information() {
        let xs = vec![vec![0.5]; 20];
        let ys: Vec<bool> = (0..20).map(|i| i < 6).collect();
        let r = probe_split_lr(&xs, &ys, 0.7, 1).unwrap();
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut stream(1, "probe", &[]));
        let pos = order[..r.n_train].iter().filter(|&&i| ys[i]).count() as f64;
        let majority = pos.max(r.n_train as f64 - pos) / r.n_train as f64;
        assert!(r.train_acc <= majority + 1e-12);
        assert!(probe_split_lr(&xs, &[true; 20], 0.7, 1).is_err());
    }

    #[test]
    fn bootstrap_brackets_the_mean() {
        let v: Vec<f64> = (0..50).map(|i| (i % 5) as f64 / 4.0).collect();
        let (lo, hi) = bootstrap_ci(&v, 1000, 7, "x").unwrap();
        let m = v.iter().sum::<f64>() / 50.0;
        assert!(lo <= m && m <= hi);
        assert_eq!(bootstrap_ci(&v, 1000, 7, "x"), Some((lo, hi)));
    }
}
