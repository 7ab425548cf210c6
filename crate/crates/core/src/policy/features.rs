//! Fixed-length policy input for a prefix:
//! `[last observation | running mean of observations | prefix_len / horizon]`,
//! dimension `2d + 1`.

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::domain::Observation;
use crate::transport::{EndpointConfig, HttpClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Observations carry their own feature vectors.
    Features,
    /// Observation text is embedded by an external endpoint.
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mode: FeatureMode,
    /// Normalizer for the prefix-length feature.
    pub horizon: usize,
    /// Per-observation dimension `d`.
    pub observation_dim: usize,
}

impl FeatureSpec {
    pub fn input_dim(&self) -> usize {
        2 * self.observation_dim + 1
    }
}

/// Text to vector, for traces without native features.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, PolicyError>;
}

/// Embedding endpoint: POST `{"model", "input": [text]}`, reply
/// `{"data": [{"embedding": [...]}]}`.
#[derive(Debug)]
pub struct EmbeddingClient {
    pub client: HttpClient,
}

impl EmbeddingClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, PolicyError> {
        Ok(Self {
            client: HttpClient::new(cfg)?,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl Embedder for EmbeddingClient {
    fn embed(&self, text: &str) -> Result<Vec<f64>, PolicyError> {
        let body = serde_json::json!({
            "model": self.client.config().model,
            "input": [text],
        });
        let reply: EmbeddingReply = self.client.post_json(&body)?;
        reply
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| PolicyError::Unsupported("embedding reply had no vectors".into()))
    }
}

/// Featurizes observations that carry feature vectors.
pub fn featurize(observations: &[Observation], horizon: usize) -> Result<Vec<f64>, PolicyError> {
    featurize_with(observations, horizon, None)
}

/// Like [`featurize`], embedding text-only observations with `embedder`.
pub fn featurize_with(
    observations: &[Observation],
    horizon: usize,
    embedder: Option<&dyn Embedder>,
) -> Result<Vec<f64>, PolicyError> {
    if observations.is_empty() {
        return Err(PolicyError::Precondition(
            "cannot featurize an empty prefix; decisions start at prefix_len 1".into(),
        ));
    }
    if horizon == 0 {
        return Err(PolicyError::Precondition("horizon must be positive".into()));
    }
    let mut vectors = Vec::with_capacity(observations.len());
    for o in observations {
        let v = match (&o.features, &o.text, embedder) {
            (Some(f), _, _) => f.clone(),
            (None, Some(text), Some(e)) => e.embed(text)?,
            _ => {
                return Err(PolicyError::Unsupported(format!(
                    "observation {} has no feature vector and no embedder is configured",
                    o.index
                )))
            }
        };
        vectors.push(v);
    }
    let d = vectors[0].len();
    if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != d) {
        return Err(PolicyError::Unsupported(format!(
            "observation {i} has dimension {} but the prefix started with {d}",
            v.len()
        )));
    }

    let n = vectors.len() as f64;
    let mut out = Vec::with_capacity(2 * d + 1);
    out.extend_from_slice(vectors.last().expect("non-empty"));
    let mut mean = vec![0.0; d];
    for v in &vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    out.extend(mean.into_iter().map(|s| s / n));
    out.push(n / horizon as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ObservationKind;

    fn obs(i: usize, f: &[f64]) -> Observation {
        Observation::with_features(i, ObservationKind::QuestionAnswer, f.to_vec())
    }

    #[test]
    fn single_observation() {
        assert_eq!(featurize(&[obs(0, &[1.0, 0.0])], 10).unwrap(), [1.0, 0.0, 1.0, 0.0, 0.1]);
    }

    #[test]
    fn two_observations() {
        let f = featurize(&[obs(0, &[1.0, 0.0]), obs(1, &[0.0, 1.0])], 10).unwrap();
        assert_eq!(f, [0.0, 1.0, 0.5, 0.5, 0.2]);
    }

    #[test]
    fn empty_prefix_is_rejected() {
        assert!(matches!(featurize(&[], 10), Err(PolicyError::Precondition(_))));
    }

    #[test]
    fn text_without_embedder_is_unsupported() {
        let mixed = [
            obs(0, &[1.0]),
            Observation::with_text(1, ObservationKind::QuestionAnswer, "Q: age? A: 40"),
        ];
        assert!(matches!(featurize(&mixed, 10), Err(PolicyError::Unsupported(_))));
    }

    struct Len;
    impl Embedder for Len {
        fn embed(&self, text: &str) -> Result<Vec<f64>, PolicyError> {
            Ok(vec![text.len() as f64])
        }
    }

    #[test]
    fn embedder_fills_text_observations() {
        let mixed = [
            obs(0, &[1.0]),
            Observation::with_text(1, ObservationKind::QuestionAnswer, "abc"),
        ];
        assert_eq!(featurize_with(&mixed, 4, Some(&Len)).unwrap(), [3.0, 2.0, 0.5]);
    }
}
