//! Run configuration: a flat JSON object. Precedence is flags, then the
//! config file, then `STOPGATE_SEED` (seed only), then built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use stopgate::cfgen::{BuildParams, CfParams};
use stopgate::eval::{EvalOptions, RolloutMode};
use stopgate::labeling::SynthConfig;
use stopgate::policy::TrainHyper;
use stopgate::seeding::json_hash;
use stopgate::transport::EndpointConfig;

use crate::CliError;

pub const SEED_ENV: &str = "STOPGATE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Discount factor for reported returns and the oracle.
    pub gamma: f64,
    pub jump_threshold: f64,
    pub low_threshold: f64,
    pub continue_ratio: f64,
    pub n_label_samples: u32,
    pub horizon_t: usize,
    pub marker_file: Option<PathBuf>,
    pub max_attempts: u32,
    pub math_offset: usize,

    // Synthetic environment.
    pub p_low: f64,
    pub p_high: f64,
    pub key_index_range: (usize, usize),
    pub feature_dim: usize,
    pub key_offset: f64,
    /// Draws per label for `synth`; 0 writes the exact curve.
    pub label_noise_samples: u32,

    // Training.
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,

    // Evaluation.
    pub rollout_mode: RolloutMode,
    pub bootstrap_resamples: usize,
    /// Budget of the fixed-budget baseline in `repro`; defaults to the
    /// rounded mean stop index of the counterfactual policy.
    pub fixed_budget: Option<usize>,

    // Experiment size for `repro`.
    pub n_train: usize,
    pub n_eval: usize,
    pub n_seeds: usize,

    // Dataset annotation.
    pub rationale: RationaleMode,
    pub confidence: bool,

    // Remote endpoints. The API key is read from the environment only.
    pub endpoint_url: Option<String>,
    pub endpoint_model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub perturber_url: Option<String>,
    pub embedding_url: Option<String>,
    pub prompt_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleMode {
    None,
    Template,
    Llm,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let endpoint = EndpointConfig::default();
        let train = TrainHyper::default();
        Self {
            seed: 0,
            gamma: 1.0,
            jump_threshold: 0.5,
            low_threshold: 0.3,
            continue_ratio: 0.8,
            n_label_samples: 50,
            horizon_t: 20,
            marker_file: None,
            max_attempts: 8,
            math_offset: 1,
            p_low: synth.p_low,
            p_high: synth.p_high,
            key_index_range: synth.key_index_range,
            feature_dim: synth.feature_dim,
            key_offset: synth.key_offset,
            label_noise_samples: 0,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            l2: train.l2,
            rollout_mode: RolloutMode::Deterministic,
            bootstrap_resamples: stopgate::eval::BOOTSTRAP_RESAMPLES,
            fixed_budget: None,
            n_train: 300,
            n_eval: 100,
            n_seeds: 3,
            rationale: RationaleMode::None,
            confidence: false,
            endpoint_url: None,
            endpoint_model: endpoint.model,
            temperature: endpoint.temperature,
            max_retries: endpoint.max_retries,
            backoff_ms: endpoint.backoff_ms,
            timeout_ms: endpoint.timeout_ms,
            max_in_flight: endpoint.max_in_flight,
            perturber_url: None,
            embedding_url: None,
            prompt_dir: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    /// Defaults, then `STOPGATE_SEED`, then the file at `path`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut base = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
            base["seed"] = Value::from(seed);
        }
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("reading config {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            let Value::Object(entries) = file else {
                return Err(usage(format!("config {} is not a JSON object", path.display())));
            };
            for (k, v) in entries {
                base[k.as_str()] = v;
            }
        }
        serde_json::from_value(base).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let unit_open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(usage(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(usage(format!("gamma = {} must lie in (0, 1]", self.gamma)));
        }
        if !(self.jump_threshold > 0.0 && self.jump_threshold <= 1.0) {
            return Err(usage(format!(
                "jump_threshold = {} must lie in (0, 1]",
                self.jump_threshold
            )));
        }
        unit_open("low_threshold", self.low_threshold)?;
        unit_open("continue_ratio", self.continue_ratio)?;
        if self.n_label_samples == 0 {
            return Err(usage("n_label_samples must be at least 1"));
        }
        if self.max_attempts == 0 {
            return Err(usage("max_attempts must be at least 1"));
        }
        if self.math_offset == 0 {
            return Err(usage("math_offset must be at least 1"));
        }
        if self.epochs > 0 && (self.learning_rate.is_nan() || self.learning_rate <= 0.0) {
            return Err(usage("learning_rate must be positive"));
        }
        if self.l2 < 0.0 {
            return Err(usage("l2 must be non-negative"));
        }
        if self.bootstrap_resamples == 0 {
            return Err(usage("bootstrap_resamples must be at least 1"));
        }
        if self.n_train == 0 || self.n_eval == 0 || self.n_seeds == 0 {
            return Err(usage("n_train, n_eval and n_seeds must be at least 1"));
        }
        if self.fixed_budget == Some(0) || self.fixed_budget.is_some_and(|k| k > self.horizon_t) {
            return Err(usage(format!(
                "fixed_budget must lie in 1..={}",
                self.horizon_t
            )));
        }
        self.synth_config(self.seed)
            .validate()
            .map_err(|e| usage(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        json_hash(self)
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            horizon: self.horizon_t,
            p_low: self.p_low,
            p_high: self.p_high,
            key_index_range: self.key_index_range,
            feature_dim: self.feature_dim,
            key_offset: self.key_offset,
            label_noise_samples: self.label_noise_samples,
            seed,
        }
    }

    pub fn endpoint(&self, url: Option<&str>) -> EndpointConfig {
        let mut cfg = EndpointConfig {
            url: None,
            api_key: None,
            model: self.endpoint_model.clone(),
            temperature: self.temperature,
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms,
            timeout_ms: self.timeout_ms,
            max_in_flight: self.max_in_flight,
        };
        cfg.apply_env();
        if let Some(u) = url.or(self.endpoint_url.as_deref()) {
            cfg.url = Some(u.to_string());
        }
        cfg
    }

    pub fn train_hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2: self.l2,
            seed,
        }
    }

    pub fn build_params(&self, seed: u64, marker_list_hash: String, feature_spec: Option<stopgate::policy::FeatureSpec>) -> BuildParams {
        BuildParams {
            cf: CfParams {
                jump: self.jump_threshold,
                low: self.low_threshold,
                max_attempts: self.max_attempts,
                n_samples: self.n_label_samples,
                horizon: self.horizon_t,
            },
            continue_ratio: self.continue_ratio,
            seed,
            math_offset: self.math_offset,
            marker_list_hash,
            feature_spec,
            confidence: self.confidence,
            rationale_retries: self.max_retries,
        }
    }

    pub fn eval_options(&self, seed: u64) -> EvalOptions {
        EvalOptions {
            mode: self.rollout_mode,
            horizon: Some(self.horizon_t),
            gamma: self.gamma,
            jump: self.jump_threshold,
            seed,
            bootstrap_resamples: self.bootstrap_resamples,
        }
    }
}
