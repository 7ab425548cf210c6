use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::counterfactual::maybe_features;
use super::{provenance_counts, CfError, DatasetManifest, ManifestHeader, MANIFEST_FORMAT};
use crate::domain::{Action, Provenance, TerminationExample, Trajectory};
use crate::policy::FeatureSpec;
use crate::seeding::stream;

/// Settings recorded in the manifest header alongside the balanced examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceParams {
    pub continue_ratio: f64,
    pub seed: u64,
    pub jump_threshold: f64,
    pub low_threshold: f64,
    pub marker_list_hash: String,
    pub feature_spec: Option<FeatureSpec>,
    pub n_pairs: usize,
    pub skipped: Vec<String>,
}

impl Default for BalanceParams {
    fn default() -> Self {
        Self {
            continue_ratio: 0.8,
            seed: 0,
            jump_threshold: 0.5,
            low_threshold: 0.3,
            marker_list_hash: String::new(),
            feature_spec: None,
            n_pairs: 0,
            skipped: Vec::new(),
        }
    }
}

fn header(source: &str, examples: &[TerminationExample], p: &BalanceParams) -> ManifestHeader {
    ManifestHeader {
        format: MANIFEST_FORMAT.to_string(),
        source: source.to_string(),
        continue_ratio: p.continue_ratio,
        jump_threshold: p.jump_threshold,
        low_threshold: p.low_threshold,
        marker_list_hash: p.marker_list_hash.clone(),
        seed: p.seed,
        counts: provenance_counts(examples),
        n_examples: examples.len(),
        n_pairs: p.n_pairs,
        skipped: p.skipped.clone(),
        feature_spec: p.feature_spec.clone(),
        config_hash: None,
        version: concat!("v", env!("CARGO_PKG_VERSION")).to_string(),
    }
}

/// Smallest `x >= 0` with `(c + x) / (n + x) >= ratio`.
fn continues_needed(c: usize, n: usize, ratio: f64) -> usize {
    let meets = |x: usize| (c + x) as f64 >= ratio * (n + x) as f64;
    if meets(0) {
        return 0;
    }
    // Closed form, then nudge for floating point.
    let mut x = ((ratio * n as f64 - c as f64) / (1.0 - ratio)).ceil().max(0.0) as usize;
    while x > 0 && meets(x - 1) {
        x -= 1;
    }
    while !meets(x) {
        x += 1;
    }
    x
}

/// Tops up continue examples with uniformly drawn (with replacement) earlier
/// prefixes of terminate trajectories until the continue fraction first
/// reaches `continue_ratio`. Existing examples are kept as given.
pub fn balance_dataset(
    mut examples: Vec<TerminationExample>,
    trajectories: &[Trajectory],
    params: &BalanceParams,
) -> Result<DatasetManifest, CfError> {
    let r = params.continue_ratio;
    if !(r > 0.0 && r < 1.0) {
        return Err(CfError::Precondition(format!("continue_ratio {r} outside (0, 1)")));
    }
    let by_id: BTreeMap<&str, &Trajectory> =
        trajectories.iter().map(|t| (t.problem_id.as_str(), t)).collect();

    // Earliest terminate prefix per problem; the pool is every shorter prefix.
    let mut stops: BTreeMap<&str, usize> = BTreeMap::new();
    for e in examples.iter().filter(|e| e.decision == Action::Terminate) {
        let s = stops.entry(e.problem_id.as_str()).or_insert(e.prefix_len);
        *s = (*s).min(e.prefix_len);
    }
    if stops.is_empty() {
        return Err(CfError::BalanceImpossible("no terminate examples".into()));
    }

    let n = examples.len();
    let c = examples.iter().filter(|e| e.decision == Action::Continue).count();
    let x = continues_needed(c, n, r);
    if x > 0 {
        let mut pool: Vec<(&Trajectory, usize)> = Vec::new();
        for (id, &stop) in &stops {
            let t = by_id.get(id).ok_or_else(|| CfError::Structural {
                problem_id: id.to_string(),
                message: "terminate example has no source trajectory".into(),
            })?;
            pool.extend((1..stop.min(t.len() + 1)).map(|len| (*t, len)));
        }
        if pool.is_empty() {
            return Err(CfError::BalanceImpossible(format!(
                "need {x} more continue examples but every terminate example is at prefix 1"
            )));
        }
        let horizon = params.feature_spec.as_ref().map_or(1, |s| s.horizon);
        let mut rng = stream(params.seed, "balance", &[]);
        for _ in 0..x {
            let &(t, len) = pool.choose(&mut rng).expect("non-empty pool");
            let mut e = TerminationExample::new(
                t.problem_id.clone(),
                len,
                Action::Continue,
                Provenance::ResampledContinue,
            );
            e.p_term = t.label(len).map(|l| l.p_term);
            if params.feature_spec.is_some() {
                e.features = maybe_features(&t.observations[..len], horizon);
            }
            examples.push(e);
        }
    }
    let header = header("counterfactual", &examples, params);
    Ok(DatasetManifest { header, examples })
}

/// Baseline training set: uniformly drawn prefixes, each labeled terminate
/// iff its own success label is at least 0.5, with the class sizes given.
pub fn uniform_manifest(
    trajectories: &[Trajectory],
    n_terminate: usize,
    n_continue: usize,
    params: &BalanceParams,
) -> Result<DatasetManifest, CfError> {
    let mut term_pool = Vec::new();
    let mut cont_pool = Vec::new();
    for t in trajectories {
        for l in &t.labels {
            if l.prefix_len == 0 || l.prefix_len > t.len() {
                continue;
            }
            if l.p_term >= 0.5 {
                term_pool.push((t, l.prefix_len, l.p_term));
            } else {
                cont_pool.push((t, l.prefix_len, l.p_term));
            }
        }
    }
    if (n_terminate > 0 && term_pool.is_empty()) || (n_continue > 0 && cont_pool.is_empty()) {
        return Err(CfError::BalanceImpossible(
            "no labeled prefixes on one side of 0.5".into(),
        ));
    }
    let horizon = params.feature_spec.as_ref().map_or(1, |s| s.horizon);
    let mut rng = stream(params.seed, "uniform", &[]);
    let mut examples = Vec::with_capacity(n_terminate + n_continue);
    for (pool, count, action) in [
        (&term_pool, n_terminate, Action::Terminate),
        (&cont_pool, n_continue, Action::Continue),
    ] {
        for _ in 0..count {
            let &(t, len, p) = pool.choose(&mut rng).expect("non-empty pool");
            let mut e = TerminationExample::new(t.problem_id.clone(), len, action, Provenance::UniformSample);
            e.p_term = Some(p);
            if params.feature_spec.is_some() {
                e.features = maybe_features(&t.observations[..len], horizon);
            }
            examples.push(e);
        }
    }
    let header = header("uniform", &examples, params);
    Ok(DatasetManifest { header, examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{SynthConfig, SynthEnv};

    #[test]
    fn continues_needed_examples() {
        assert_eq!(continues_needed(975, 1950, 0.8), 2925);
        assert_eq!(continues_needed(1, 2, 0.8), 3);
        assert_eq!(continues_needed(85, 100, 0.8), 0);
        assert_eq!(continues_needed(0, 1, 0.5), 1);
    }

    fn pairs(env: &SynthEnv, n: usize) -> (Vec<Trajectory>, Vec<TerminationExample>) {
        let trajs = env.generate(n).unwrap();
        let mut ex = Vec::new();
        for t in &trajs {
            let k = t.observations.iter().position(|o| o.is_key == Some(true)).unwrap() + 1;
            ex.push(TerminationExample::new(t.problem_id.clone(), k, Action::Terminate, Provenance::OriginalTerminate));
            ex.push(TerminationExample::new(t.problem_id.clone(), k, Action::Continue, Provenance::CounterfactualContinue));
        }
        (trajs, ex)
    }

    #[test]
    fn one_pair_gets_three_resamples() {
        let env = SynthEnv::new(SynthConfig {
            key_index_range: (4, 4),
            ..SynthConfig::default()
        })
        .unwrap();
        let (trajs, ex) = pairs(&env, 1);
        let m = balance_dataset(ex.clone(), &trajs, &BalanceParams::default()).unwrap();
        assert_eq!(m.examples.len(), 5);
        assert_eq!(&m.examples[..2], &ex[..]);
        assert_eq!(m.header.counts[&Provenance::ResampledContinue], 3);
        assert!(m.examples[2..].iter().all(|e| e.prefix_len < 4));
    }

    #[test]
    fn ratio_already_met_is_unchanged() {
        let env = SynthEnv::new(SynthConfig::default()).unwrap();
        let (trajs, mut ex) = pairs(&env, 1);
        for _ in 0..9 {
            ex.push(ex[1].clone());
        }
        // 1 terminate, 10 continue: 91% continue.
        let m = balance_dataset(ex.clone(), &trajs, &BalanceParams::default()).unwrap();
        assert_eq!(m.examples, ex);
    }

    #[test]
    fn nothing_earlier_is_impossible() {
        let env = SynthEnv::new(SynthConfig {
            key_index_range: (1, 1),
            ..SynthConfig::default()
        })
        .unwrap();
        let (trajs, ex) = pairs(&env, 2);
        assert!(matches!(
            balance_dataset(ex, &trajs, &BalanceParams::default()),
            Err(CfError::BalanceImpossible(_))
        ));
        assert!(matches!(
            balance_dataset(Vec::new(), &trajs, &BalanceParams::default()),
            Err(CfError::BalanceImpossible(_))
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let env = SynthEnv::new(SynthConfig::default()).unwrap();
        let (trajs, ex) = pairs(&env, 20);
        let a = balance_dataset(ex.clone(), &trajs, &BalanceParams::default()).unwrap();
        let b = balance_dataset(ex.clone(), &trajs, &BalanceParams::default()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = balance_dataset(ex, &trajs, &BalanceParams { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
