//! Desk-scale stand-in for a labeled conversation corpus.
//!
//! Each trajectory hides one key observation at 1-based position `k`. The
//! true success curve is a step: `p_low` for prefixes shorter than `k` and
//! `p_high` from `k` on. Non-key observations are `N(0, I)`; the key one is
//! `N(offset * u, I)` for a unit direction `u` fixed by the seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    label_trajectory, LabelPlan, LabelingError, Outcome, PrefixSelection, ProviderError,
    ProviderKind, SuccessProvider, SuccessQuery,
};
use crate::domain::{Domain, Observation, ObservationKind, PrefixLabel, Trajectory};
use crate::seeding::{item_stream, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub horizon: usize,
    pub p_low: f64,
    pub p_high: f64,
    /// Inclusive range of 1-based key positions.
    pub key_index_range: (usize, usize),
    pub feature_dim: usize,
    /// Distance between the key and non-key feature means.
    pub key_offset: f64,
    /// Bernoulli draws per label; 0 labels with the exact curve.
    pub label_noise_samples: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            p_low: 0.1,
            p_high: 0.8,
            key_index_range: (2, 15),
            feature_dim: 8,
            key_offset: 2.0,
            label_noise_samples: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), LabelingError> {
        let bad = |m: String| Err(LabelingError::Config(m));
        if self.horizon < 2 {
            return bad(format!("horizon {} must be at least 2", self.horizon));
        }
        if !(0.0 <= self.p_low && self.p_low < self.p_high && self.p_high <= 1.0) {
            return bad(format!(
                "need 0 <= p_low < p_high <= 1 (got {} and {})",
                self.p_low, self.p_high
            ));
        }
        let (lo, hi) = self.key_index_range;
        if lo < 1 || lo > hi || hi > self.horizon - 1 {
            return bad(format!(
                "key_index_range [{lo}, {hi}] must lie within [1, {}]",
                self.horizon - 1
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(self.key_offset.is_finite() && self.key_offset >= 0.0) {
            return bad(format!("key_offset {} must be finite and >= 0", self.key_offset));
        }
        Ok(())
    }
}

/// The synthetic environment: generator, exact provider and perturber.
#[derive(Debug, Clone)]
pub struct SynthEnv {
    cfg: SynthConfig,
    direction: Vec<f64>,
}

impl SynthEnv {
    pub fn new(cfg: SynthConfig) -> Result<Self, LabelingError> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, "synth/direction", &[]);
        let direction = loop {
            let v: Vec<f64> = (0..cfg.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        };
        Ok(Self { cfg, direction })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn oracle(&self) -> SynthOracle {
        SynthOracle {
            p_low: self.cfg.p_low,
            p_high: self.cfg.p_high,
        }
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.cfg.feature_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect()
    }

    fn key_features(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.noise(rng)
            .into_iter()
            .zip(&self.direction)
            .map(|(z, u)| z + self.cfg.key_offset * u)
            .collect()
    }

    /// Trajectory `i` of the stream; independent of how many others are drawn.
    pub fn trajectory(&self, i: usize) -> Trajectory {
        let problem_id = format!("synth-{i:05}");
        let mut rng = item_stream(self.cfg.seed, "synth/trajectory", &problem_id, 0);
        let (lo, hi) = self.cfg.key_index_range;
        let key = rng.random_range(lo..=hi);
        let observations = (0..self.cfg.horizon)
            .map(|idx| {
                let is_key = idx + 1 == key;
                let features = if is_key {
                    self.key_features(&mut rng)
                } else {
                    self.noise(&mut rng)
                };
                Observation {
                    index: idx,
                    kind: ObservationKind::QuestionAnswer,
                    text: None,
                    features: Some(features),
                    is_key: Some(is_key),
                }
            })
            .collect();
        Trajectory {
            problem_id,
            ground_truth: format!("answer-{i}"),
            domain: Domain::Synthetic,
            observations,
            labels: Vec::new(),
            baseline_label: None,
        }
    }

    /// `n` unlabeled trajectories, numbered from `start`.
    pub fn generate_from(&self, start: usize, n: usize) -> Vec<Trajectory> {
        (start..start + n).map(|i| self.trajectory(i)).collect()
    }

    pub fn generate(&self, n: usize) -> Result<Vec<Trajectory>, LabelingError> {
        if n == 0 {
            return Err(LabelingError::Config("n must be at least 1".into()));
        }
        Ok(self.generate_from(0, n))
    }

    /// A replacement non-key observation for position `index`.
    pub fn perturb(&self, t: &Trajectory, index: usize, seed: u64) -> Result<Observation, ProviderError> {
        if t.domain != Domain::Synthetic {
            return Err(ProviderError::Unsupported(format!(
                "cannot perturb {} trajectory {}",
                t.domain, t.problem_id
            )));
        }
        let Some(orig) = t.observations.get(index) else {
            return Err(ProviderError::Unsupported(format!(
                "index {index} outside trajectory {} of length {}",
                t.problem_id,
                t.len()
            )));
        };
        let mut rng = item_stream(seed, "synth/perturb", &t.problem_id, index as u64);
        Ok(Observation {
            index,
            kind: orig.kind,
            text: None,
            features: Some(self.noise(&mut rng)),
            is_key: Some(false),
        })
    }

    /// Labels with the exact curve, or with `label_noise_samples` draws.
    /// Baseline (empty prefix) labels are always attached.
    pub fn label(&self, trajectories: &[Trajectory], seed: u64) -> Result<Vec<Trajectory>, LabelingError> {
        let n = self.cfg.label_noise_samples;
        let plan = LabelPlan {
            n_samples: n.max(1),
            seed,
            selection: PrefixSelection::All,
            label_baseline: true,
        };
        let oracle = self.oracle();
        let sampler = BernoulliSampler(oracle);
        let provider: &dyn SuccessProvider = if n == 0 { &oracle } else { &sampler };
        trajectories
            .iter()
            .map(|t| label_trajectory(provider, t, &plan))
            .collect()
    }

    /// The exact step curve of a trajectory, for tests and audits.
    pub fn true_curve(&self, t: &Trajectory) -> Vec<PrefixLabel> {
        let oracle = self.oracle();
        (1..=t.len())
            .map(|len| {
                let p = oracle.p_for(&t.observations[..len]);
                PrefixLabel::terminate_only(len, p, 1)
            })
            .collect()
    }
}

/// Exact provider for synthetic trajectories: `p_high` once a key observation
/// is in the prefix, `p_low` before.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOracle {
    pub p_low: f64,
    pub p_high: f64,
}

impl SynthOracle {
    pub fn p_for(&self, observations: &[Observation]) -> f64 {
        if observations.iter().any(|o| o.is_key == Some(true)) {
            self.p_high
        } else {
            self.p_low
        }
    }
}

impl SuccessProvider for SynthOracle {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Exact
    }

    fn probability(&self, q: &SuccessQuery<'_>, outcome: Outcome) -> Result<f64, ProviderError> {
        if q.domain != Domain::Synthetic {
            return Err(ProviderError::Unsupported(format!(
                "synthetic oracle cannot label {} trajectory {}",
                q.domain, q.problem_id
            )));
        }
        match outcome {
            Outcome::Terminate => Ok(self.p_for(q.observations)),
            Outcome::Continue => Err(ProviderError::Unsupported(
                "synthetic oracle has no continue mode".into(),
            )),
        }
    }
}

/// Hides an exact provider behind Bernoulli draws, turning it into a sampled
/// one.
#[derive(Debug, Clone)]
pub struct BernoulliSampler<P>(pub P);

impl<P: SuccessProvider> SuccessProvider for BernoulliSampler<P> {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Sampled
    }

    fn supports_continue(&self) -> bool {
        self.0.supports_continue()
    }

    fn draw(
        &self,
        q: &SuccessQuery<'_>,
        outcome: Outcome,
        rng: &mut ChaCha8Rng,
    ) -> Result<bool, ProviderError> {
        let p = self.0.probability(q, outcome)?;
        Ok(rng.random::<f64>() < p)
    }
}

/// [`crate::cfgen::Perturber`] backed by [`SynthEnv::perturb`].
#[derive(Debug, Clone)]
pub struct SynthPerturber {
    pub env: SynthEnv,
}
