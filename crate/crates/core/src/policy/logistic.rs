//! L2-regularized logistic regression trained by full-batch gradient descent.
//!
//! Loss: `mean_i [softplus(z_i) - y_i z_i] + (l2 / 2) |w|^2` with
//! `z_i = w . x_i + b`. The bias is not regularized.

use serde::{Deserialize, Serialize};

use super::features::{featurize_with, Embedder, FeatureSpec};
use super::{Policy, PolicyError};
use crate::cfgen::DatasetManifest;
use crate::domain::{Action, Decision, PrefixView, TerminationExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
            seed: 0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

pub fn logistic_loss(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> f64 {
    let n = xs.len() as f64;
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = dot(w, x) + b;
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum();
    data / n + 0.5 * l2 * dot(w, w)
}

/// Analytic gradient of [`logistic_loss`] with respect to `(w, b)`.
pub fn logistic_gradient(
    w: &[f64],
    b: f64,
    xs: &[Vec<f64>],
    ys: &[bool],
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let r = sigmoid(dot(w, x) + b) - if y { 1.0 } else { 0.0 };
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
    }
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (gw, gb / n)
}

/// Fits `(weights, bias)` from zero initialization.
pub fn fit_logistic(xs: &[Vec<f64>], ys: &[bool], hyper: &TrainHyper) -> Result<(Vec<f64>, f64), PolicyError> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(PolicyError::Precondition(format!(
            "{} inputs for {} targets",
            xs.len(),
            ys.len()
        )));
    }
    let dim = xs[0].len();
    if let Some(i) = xs.iter().position(|x| x.len() != dim) {
        return Err(PolicyError::Precondition(format!(
            "input {i} has dimension {} (expected {dim})",
            xs[i].len()
        )));
    }
    let positives = ys.iter().filter(|&&y| y).count();
    if positives == 0 || positives == ys.len() {
        return Err(PolicyError::DegenerateDataset(format!(
            "{} examples all of one class",
            ys.len()
        )));
    }

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for epoch in 0..hyper.epochs {
        let (gw, gb) = logistic_gradient(&w, b, xs, ys, hyper.l2);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= hyper.learning_rate * g;
        }
        b -= hyper.learning_rate * gb;
        let loss = logistic_loss(&w, b, xs, ys, hyper.l2);
        if !loss.is_finite() {
            return Err(PolicyError::Divergence {
                epoch,
                learning_rate: hyper.learning_rate,
            });
        }
    }
    Ok((w, b))
}

/// Behavioral-cloning stand-in: `p_terminate = sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticPolicy {
    pub name: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_spec: FeatureSpec,
    /// Hash of the manifest the weights were fit on.
    pub trained_on: String,
    pub hyper: TrainHyper,
}

impl LogisticPolicy {
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }

    fn decide_with(&self, view: &PrefixView<'_>, embedder: Option<&dyn Embedder>) -> Result<Decision, PolicyError> {
        let x = featurize_with(view.observations, self.feature_spec.horizon, embedder)?;
        if x.len() != self.weights.len() {
            return Err(PolicyError::Unsupported(format!(
                "prefix featurizes to {} values but the checkpoint expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(Decision::from_probability(self.probability(&x)))
    }

    /// Binds an embedder for text-mode checkpoints.
    pub fn with_embedder<'a>(&'a self, embedder: &'a dyn Embedder) -> EmbeddedLogistic<'a> {
        EmbeddedLogistic {
            model: self,
            embedder,
        }
    }
}

impl Policy for LogisticPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        self.decide_with(view, None)
    }
}

pub struct EmbeddedLogistic<'a> {
    model: &'a LogisticPolicy,
    embedder: &'a dyn Embedder,
}

impl Policy for EmbeddedLogistic<'_> {
    fn name(&self) -> String {
        self.model.name.clone()
    }

    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        self.model.decide_with(view, Some(self.embedder))
    }
}

/// Trains on explicit examples; each must carry a feature vector.
pub fn train_on_examples(
    name: &str,
    examples: &[TerminationExample],
    spec: FeatureSpec,
    hyper: &TrainHyper,
    trained_on: &str,
) -> Result<LogisticPolicy, PolicyError> {
    let mut xs = Vec::with_capacity(examples.len());
    let mut ys = Vec::with_capacity(examples.len());
    for e in examples {
        let x = e.features.clone().ok_or_else(|| {
            PolicyError::Precondition(format!(
                "example {}@{} has no feature vector",
                e.problem_id, e.prefix_len
            ))
        })?;
        xs.push(x);
        ys.push(e.decision == Action::Terminate);
    }
    if xs.is_empty() {
        return Err(PolicyError::DegenerateDataset("no examples".into()));
    }
    let (weights, bias) = fit_logistic(&xs, &ys, hyper)?;
    Ok(LogisticPolicy {
        name: name.to_string(),
        weights,
        bias,
        feature_spec: spec,
        trained_on: trained_on.to_string(),
        hyper: *hyper,
    })
}

/// Fits the termination classifier on a dataset manifest.
pub fn train_logistic(manifest: &DatasetManifest, hyper: &TrainHyper) -> Result<LogisticPolicy, PolicyError> {
    let spec = manifest.header.feature_spec.clone().ok_or_else(|| {
        PolicyError::Precondition("manifest does not record a feature spec".into())
    })?;
    train_on_examples("logistic", &manifest.examples, spec, hyper, &manifest.hash())
}

/// Fraction of examples whose thresholded prediction matches the label.
pub fn accuracy(model: &LogisticPolicy, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| (model.probability(x) >= 0.5) == y)
        .count();
    hits as f64 / xs.len() as f64
}
