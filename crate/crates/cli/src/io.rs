//! File formats. Trajectory JSONL files may start with a `{"_meta": ...}`
//! line carrying the producing configuration; readers skip it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stopgate::cfgen::DatasetManifest;
use stopgate::domain::{validate_trajectory, EvalReport, Trajectory};
use stopgate::policy::LogisticPolicy;
use stopgate::VERSION;

use crate::config::RunConfig;
use crate::CliError;

/// Provenance stamp written into every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
}

impl Stamp {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            version: VERSION.to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
        }
    }
}

#[derive(Serialize)]
struct MetaLine<'a> {
    #[serde(rename = "_meta")]
    meta: &'a Stamp,
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| runtime(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| runtime(path, e))
}

pub fn parse_trajectories<R: BufRead>(r: R, source: &str) -> Result<Vec<Trajectory>, CliError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| CliError::Runtime(format!("{source}: line {n}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| CliError::Runtime(format!("{source}: line {n}: {e}")))?;
        if v.get("_meta").is_some() {
            continue;
        }
        let t: Trajectory = serde_json::from_value(v)
            .map_err(|e| CliError::Runtime(format!("{source}: line {n}: {e}")))?;
        let problems = validate_trajectory(&t);
        if !problems.is_empty() {
            return Err(CliError::Runtime(format!(
                "{source}: line {n}: {}",
                problems.join("; ")
            )));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    parse_trajectories(open(path)?, &path.display().to_string())
}

pub fn write_trajectories_to<W: Write>(mut w: W, trajectories: &[Trajectory], stamp: Option<&Stamp>) -> std::io::Result<()> {
    if let Some(meta) = stamp {
        serde_json::to_writer(&mut w, &MetaLine { meta })?;
        w.write_all(b"\n")?;
    }
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory], stamp: &Stamp) -> Result<(), CliError> {
    write_trajectories_to(create(path)?, trajectories, Some(stamp)).map_err(|e| runtime(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| runtime(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| runtime(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| runtime(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| runtime(path, e))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), CliError> {
    let mut w = create(path)?;
    manifest.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(|e| runtime(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::read_jsonl(open(path)?).map_err(|e| runtime(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T], stamp: &Stamp) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut go = || -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &MetaLine { meta: stamp })?;
        w.write_all(b"\n")?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    go().map_err(|e| runtime(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub policy: LogisticPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub report: EvalReport,
}

pub fn read_checkpoint(path: &Path) -> Result<LogisticPolicy, CliError> {
    Ok(read_json::<CheckpointFile>(path)?.policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_line_is_named() {
        let good = r#"{"problem_id":"a","ground_truth":"x","domain":"synthetic","observations":[{"index":0,"kind":"question_answer","features":[1.0]}],"labels":[{"prefix_len":1,"p_term":0.5,"n_term_samples":1}]}"#;
        let mut text = String::new();
        for _ in 0..6 {
            text.push_str(good);
            text.push('\n');
        }
        text.push_str("{not json\n");
        let err = parse_trajectories(text.as_bytes(), "t.jsonl").unwrap_err();
        assert!(err.to_string().contains("line 7"), "{err}");
        assert_eq!(parse_trajectories(text.lines().take(6).collect::<Vec<_>>().join("\n").as_bytes(), "t").unwrap().len(), 6);
    }
}
