//! Splits a reasoning trace into episodes, each opening with a discourse
//! marker ("Wait", "Alternatively", ...) at the start of a sentence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::sha256_hex;

pub const DEFAULT_MARKERS: &[&str] = &[
    "Wait",
    "Alternatively",
    "However",
    "Hmm",
    "Let me reconsider",
    "On second thought",
];

const SENTENCE_END: [char; 3] = ['.', '!', '?'];

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("marker list is empty")]
    NoMarkers,
    #[error("marker {0} is empty")]
    EmptyMarker(usize),
    #[error("prefix of {k} episodes requested but the trace has {count}")]
    PrefixOutOfRange { k: usize, count: usize },
    #[error("reading marker file {path}: {source}")]
    MarkerFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Episode boundaries as half-open byte ranges that tile the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSplit {
    pub episodes: Vec<(usize, usize)>,
    /// `(marker, byte offset)` for every boundary after the first episode.
    pub markers_hit: Vec<(String, usize)>,
}

impl EpisodeSplit {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episode<'a>(&self, trace: &'a str, i: usize) -> Option<&'a str> {
        self.episodes.get(i).map(|&(s, e)| &trace[s..e])
    }
}

pub fn validate_markers<S: AsRef<str>>(markers: &[S]) -> Result<(), SegmentError> {
    if markers.is_empty() {
        return Err(SegmentError::NoMarkers);
    }
    if let Some(i) = markers.iter().position(|m| m.as_ref().is_empty()) {
        return Err(SegmentError::EmptyMarker(i));
    }
    Ok(())
}

/// Case-sensitive segmentation. A marker opens a new episode when it is
/// preceded by start-of-text or by `.`/`!`/`?` plus whitespace, or by a
/// newline, and is not the head of a longer word ("Waiting" does not match
/// "Wait"). When several markers match at one offset the longest wins.
pub fn segment_episodes<S: AsRef<str>>(
    trace: &str,
    markers: &[S],
) -> Result<EpisodeSplit, SegmentError> {
    validate_markers(markers)?;
    if trace.is_empty() {
        return Ok(EpisodeSplit {
            episodes: Vec::new(),
            markers_hit: Vec::new(),
        });
    }

    let mut starts = Vec::new();
    let mut hits = Vec::new();
    for (pos, _) in trace.char_indices() {
        if pos == 0 || !at_sentence_start(&trace[..pos]) {
            continue;
        }
        let rest = &trace[pos..];
        let best = markers
            .iter()
            .map(AsRef::as_ref)
            .filter(|m| rest.starts_with(m) && !continues_word(&rest[m.len()..]))
            .max_by_key(|m| m.len());
        if let Some(m) = best {
            starts.push(pos);
            hits.push((m.to_string(), pos));
        }
    }

    let mut episodes = Vec::with_capacity(starts.len() + 1);
    let mut begin = 0;
    for &s in &starts {
        episodes.push((begin, s));
        begin = s;
    }
    episodes.push((begin, trace.len()));

    Ok(EpisodeSplit {
        episodes,
        markers_hit: hits,
    })
}

fn at_sentence_start(before: &str) -> bool {
    let trimmed = before.trim_end();
    if trimmed.len() == before.len() {
        // no whitespace between the previous sentence and the marker
        return false;
    }
    if trimmed.is_empty() {
        return true;
    }
    let gap = &before[trimmed.len()..];
    gap.contains('\n') || trimmed.ends_with(SENTENCE_END)
}

fn continues_word(after: &str) -> bool {
    after
        .chars()
        .next()
        .is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Concatenation of the first `k` episodes.
pub fn prefix_text<'a>(
    split: &EpisodeSplit,
    trace: &'a str,
    k: usize,
) -> Result<&'a str, SegmentError> {
    if k > split.len() {
        return Err(SegmentError::PrefixOutOfRange {
            k,
            count: split.len(),
        });
    }
    if k == 0 {
        return Ok("");
    }
    Ok(&trace[..split.episodes[k - 1].1])
}

/// Returns the thinking span of a trace (between `<think>` and `</think>`)
/// and its byte offset. Traces without tags are treated as all thinking; the
/// solution block after `</think>` is never part of an episode.
pub fn thinking_span(trace: &str) -> (usize, &str) {
    const OPEN: &str = "<think>";
    const CLOSE: &str = "</think>";
    let start = trace.find(OPEN).map(|i| i + OPEN.len()).unwrap_or(0);
    let end = trace[start..]
        .find(CLOSE)
        .map(|i| start + i)
        .unwrap_or(trace.len());
    (start, &trace[start..end])
}

/// Reads one marker per line; blank lines are skipped.
pub fn load_markers(path: impl AsRef<Path>) -> Result<Vec<String>, SegmentError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| SegmentError::MarkerFile {
        path: path.display().to_string(),
        source,
    })?;
    let markers: Vec<String> = raw
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    validate_markers(&markers)?;
    Ok(markers)
}

pub fn default_markers() -> Vec<String> {
    DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect()
}

/// Hash recorded in dataset manifests so the marker list travels with the data.
pub fn marker_list_hash<S: AsRef<str>>(markers: &[S]) -> String {
    let joined: Vec<&str> = markers.iter().map(AsRef::as_ref).collect();
    sha256_hex(joined.join("\n").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACE: &str = "Let me try factoring. Wait, that fails. Alternatively, complete the square.";

    #[test]
    fn three_episodes_at_markers() {
        let split = segment_episodes(TRACE, &["Wait", "Alternatively"]).unwrap();
        let wait = TRACE.find("Wait").unwrap();
        let alt = TRACE.find("Alternatively").unwrap();
        assert_eq!(
            split.episodes,
            vec![(0, wait), (wait, alt), (alt, TRACE.len())]
        );
        assert_eq!(
            split.markers_hit,
            vec![("Wait".to_string(), wait), ("Alternatively".to_string(), alt)]
        );
    }

    #[test]
    fn no_marker_gives_one_episode() {
        let split = segment_episodes("Just compute it directly.", DEFAULT_MARKERS).unwrap();
        assert_eq!(split.episodes, vec![(0, 25)]);
    }

    #[test]
    fn empty_trace_has_no_episodes() {
        let split = segment_episodes("", DEFAULT_MARKERS).unwrap();
        assert!(split.is_empty());
        assert_eq!(prefix_text(&split, "", 0).unwrap(), "");
    }

    #[test]
    fn prefix_texts() {
        let split = segment_episodes(TRACE, &["Wait", "Alternatively"]).unwrap();
        assert_eq!(prefix_text(&split, TRACE, 3).unwrap(), TRACE);
        assert_eq!(prefix_text(&split, TRACE, 0).unwrap(), "");
        assert_eq!(
            prefix_text(&split, TRACE, 2).unwrap(),
            "Let me try factoring. Wait, that fails. "
        );
        assert!(matches!(
            prefix_text(&split, TRACE, 4),
            Err(SegmentError::PrefixOutOfRange { k: 4, count: 3 })
        ));
    }

    #[test]
    fn mid_sentence_and_lowercase_markers_do_not_split() {
        let t = "I should Wait here. then wait. Waiting is fine. However: done";
        let split = segment_episodes(t, DEFAULT_MARKERS).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split.markers_hit[0].0, "However");
    }

    #[test]
    fn newline_counts_as_sentence_end() {
        let t = "step one\nHmm, maybe not\n\nLet me reconsider the sign";
        let split = segment_episodes(t, DEFAULT_MARKERS).unwrap();
        let names: Vec<_> = split.markers_hit.iter().map(|(m, _)| m.as_str()).collect();
        assert_eq!(names, ["Hmm", "Let me reconsider"]);
    }

    #[test]
    fn longest_marker_wins() {
        let t = "A. Let me reconsider.";
        let split = segment_episodes(t, &["Let me", "Let me reconsider"]).unwrap();
        assert_eq!(split.markers_hit, vec![("Let me reconsider".to_string(), 3)]);
    }

    #[test]
    fn marker_list_preconditions() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            segment_episodes("x", &empty),
            Err(SegmentError::NoMarkers)
        ));
        assert!(matches!(
            segment_episodes("x", &["Wait", ""]),
            Err(SegmentError::EmptyMarker(1))
        ));
    }

    #[test]
    fn thinking_span_excludes_solution() {
        let t = "<think>a. Wait, b.</think>The answer is 4.";
        let (off, span) = thinking_span(t);
        assert_eq!(off, 7);
        assert_eq!(span, "a. Wait, b.");
        assert_eq!(thinking_span("plain"), (0, "plain"));
    }

    #[test]
    fn marker_hash_depends_on_order() {
        assert_ne!(
            marker_list_hash(&["Wait", "Hmm"]),
            marker_list_hash(&["Hmm", "Wait"])
        );
    }
}
