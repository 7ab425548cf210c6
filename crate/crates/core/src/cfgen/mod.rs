//! Counterfactual termination datasets: find where terminating becomes
//! right, build a minimally different prefix where it is wrong, label the two
//! terminate/continue, then balance and annotate.

mod augment;
mod balance;
mod build;
mod counterfactual;

pub use augment::{
    augment_confidence, augment_rationale, confidence_phrase, export_chat, ChatRecord,
    LlmRationale, RationaleContext, RationaleProvider, TemplateRationale,
};
pub use balance::{balance_dataset, uniform_manifest, BalanceParams};
pub use build::{build_manifest, BuildOutcome, BuildParams};
pub use counterfactual::{
    make_counterfactual_math, make_counterfactual_medical, CfParams, Perturber, RemotePerturber,
};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Provenance, PrefixLabel, TerminationExample};
use crate::labeling::{LabelingError, ProviderError};
use crate::policy::{FeatureSpec, PolicyError};
use crate::seeding::sha256_hex;

/// Slack for label differences that are exact in decimal but not in binary
/// (`0.6 - 0.1` is `0.49999999999999994`).
const JUMP_EPS: f64 = 1e-12;

pub const MANIFEST_FORMAT: &str = "stopgate-manifest/1";

#[derive(Debug, Error)]
pub enum CfError {
    #[error("label index {index} of {problem_id} is not a breakpoint")]
    NotABreakpoint { problem_id: String, index: usize },
    #[error("no counterfactual for {problem_id} below the threshold after {attempts} attempts")]
    CfExhausted { problem_id: String, attempts: u32 },
    #[error("{0}")]
    Range(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("trajectory {problem_id}: {message}")]
    Structural { problem_id: String, message: String },
    #[error("cannot balance: {0}")]
    BalanceImpossible(String),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error("perturbing {problem_id}: {source}")]
    Perturb {
        problem_id: String,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Features(#[from] PolicyError),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything about a dataset except its examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    /// What produced the examples (`counterfactual`, `uniform`, ...).
    pub source: String,
    pub continue_ratio: f64,
    pub jump_threshold: f64,
    pub low_threshold: f64,
    pub marker_list_hash: String,
    pub seed: u64,
    pub counts: BTreeMap<Provenance, usize>,
    pub n_examples: usize,
    pub n_pairs: usize,
    /// Problems whose counterfactual search was exhausted.
    pub skipped: Vec<String>,
    pub feature_spec: Option<FeatureSpec>,
    /// Hash of the run configuration that produced the manifest, if any.
    pub config_hash: Option<String>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub examples: Vec<TerminationExample>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ManifestHeader,
    sha256: String,
}

pub fn provenance_counts(examples: &[TerminationExample]) -> BTreeMap<Provenance, usize> {
    let mut counts = BTreeMap::new();
    for e in examples {
        *counts.entry(e.provenance).or_insert(0) += 1;
    }
    counts
}

impl DatasetManifest {
    /// Canonical JSONL body: header line, then one example per line.
    fn canonical(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    pub fn terminate_fraction(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        let t = self
            .examples
            .iter()
            .filter(|e| e.decision == crate::domain::Action::Terminate)
            .count();
        t as f64 / self.examples.len() as f64
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let line = HeaderLine {
            header: self.header.clone(),
            sha256: self.hash(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
        for e in &self.examples {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses a manifest and checks its recorded hash.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, CfError> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, message: String| CfError::Parse { line, message };
        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty manifest".into()))?;
        let head: HeaderLine =
            serde_json::from_str(&first?).map_err(|e| parse_err(1, e.to_string()))?;
        let mut examples = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            examples.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?);
        }
        let m = DatasetManifest {
            header: head.header,
            examples,
        };
        if m.hash() != head.sha256 {
            return Err(parse_err(1, "recorded sha256 does not match contents".into()));
        }
        Ok(m)
    }
}

/// Earliest label index `i` where `p_term` rises by at least `jump` over the
/// previous prefix. Index 0 compares against `baseline` and is skipped when
/// no baseline is given.
pub fn detect_breakpoint(labels: &[PrefixLabel], jump: f64, baseline: Option<&PrefixLabel>) -> Option<usize> {
    debug_assert!(jump > 0.0 && jump <= 1.0, "jump {jump} outside (0, 1]");
    (0..labels.len()).find(|&i| jump_at(labels, i, baseline).is_some_and(|d| d >= jump - JUMP_EPS))
}

/// Increase of `p_term` at label index `i`, if there is a previous value.
pub fn jump_at(labels: &[PrefixLabel], i: usize, baseline: Option<&PrefixLabel>) -> Option<f64> {
    let prev = if i == 0 {
        baseline?.p_term
    } else {
        labels.get(i - 1)?.p_term
    };
    Some(labels.get(i)?.p_term - prev)
}

/// Earliest label index where terminating beats continuing
/// (`p_term > p_cont`, strictly).
pub fn detect_math_breakpoint(labels: &[PrefixLabel]) -> Result<Option<usize>, CfError> {
    for (i, l) in labels.iter().enumerate() {
        let p_cont = l.p_cont.ok_or_else(|| CfError::Structural {
            problem_id: String::new(),
            message: format!("label {i} (prefix {}) has no p_cont", l.prefix_len),
        })?;
        if l.p_term > p_cont {
            return Ok(Some(i));
        }
    }
    Ok(None)
}
