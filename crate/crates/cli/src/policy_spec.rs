//! `--policy` strings: `fixed:<k>`, `threshold:<theta>`, `oracle`,
//! `logistic:<checkpoint>`, `remote:<url>`.

use std::path::{Path, PathBuf};

use stopgate::domain::{Decision, PrefixView, Trajectory};
use stopgate::policy::{
    EmbeddingClient, FeatureMode, FixedBudget, LogisticPolicy, OraclePolicy, Policy, PolicyError,
    RemotePolicy, ThresholdPolicy,
};

use crate::config::RunConfig;
use crate::io::read_checkpoint;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Fixed(usize),
    Threshold(f64),
    Oracle,
    Logistic(PathBuf),
    Remote(String),
}

pub fn parse_policy_spec(s: &str) -> Result<PolicySpec, CliError> {
    let bad = || CliError::Usage(format!(
        "unknown policy {s:?}; expected fixed:<k>, threshold:<theta>, oracle, logistic:<checkpoint> or remote:<url>"
    ));
    if s == "oracle" {
        return Ok(PolicySpec::Oracle);
    }
    let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "fixed" => arg.parse().map(PolicySpec::Fixed).map_err(|_| bad()),
        "threshold" => arg.parse().map(PolicySpec::Threshold).map_err(|_| bad()),
        "logistic" if !arg.is_empty() => Ok(PolicySpec::Logistic(arg.into())),
        "remote" if !arg.is_empty() => Ok(PolicySpec::Remote(arg.to_string())),
        _ => Err(bad()),
    }
}

/// Logistic checkpoint over text observations, with its embedding client.
struct TextLogistic {
    model: LogisticPolicy,
    embedder: EmbeddingClient,
}

impl Policy for TextLogistic {
    fn name(&self) -> String {
        self.model.name.clone()
    }

    fn decide(&self, view: &PrefixView<'_>) -> Result<Decision, PolicyError> {
        self.model.with_embedder(&self.embedder).decide(view)
    }
}

fn load_logistic(path: &Path, cfg: &RunConfig) -> Result<Box<dyn Policy>, CliError> {
    let model = read_checkpoint(path)?;
    if model.feature_spec.mode == FeatureMode::Text {
        let url = cfg.embedding_url.as_deref().ok_or_else(|| {
            CliError::Usage("text-mode checkpoint needs embedding_url in the config".into())
        })?;
        let embedder = EmbeddingClient::new(cfg.endpoint(Some(url)))?;
        return Ok(Box::new(TextLogistic { model, embedder }));
    }
    Ok(Box::new(model))
}

/// Instantiates a policy. Threshold policies read their confidence score
/// from the logistic checkpoint at `confidence`.
pub fn build_policy(
    spec: &PolicySpec,
    cfg: &RunConfig,
    trajectories: &[Trajectory],
    confidence: Option<&Path>,
) -> Result<Box<dyn Policy>, CliError> {
    let usage = |e: PolicyError| CliError::Usage(e.to_string());
    Ok(match spec {
        PolicySpec::Fixed(k) => Box::new(FixedBudget::new(*k).map_err(usage)?),
        PolicySpec::Threshold(theta) => {
            let path = confidence.ok_or_else(|| {
                CliError::Usage("threshold policies need --confidence <checkpoint>".into())
            })?;
            let scorer = load_logistic(path, cfg)?;
            let policy = ThresholdPolicy::new(
                move |view: &PrefixView<'_>| {
                    scorer.decide(view).map(|d| d.p_terminate).map_err(|e| e.to_string())
                },
                *theta,
            )
            .map_err(usage)?;
            Box::new(policy)
        }
        PolicySpec::Oracle => Box::new(OraclePolicy::new(trajectories, cfg.gamma)?),
        PolicySpec::Logistic(path) => load_logistic(path, cfg)?,
        PolicySpec::Remote(url) => Box::new(RemotePolicy::new(url.clone(), cfg.endpoint(Some(url)))?),
    })
}
