//! Corpus records, JSONL helpers, per-sample documents and label-stratified splits.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotator::{AnnotatedChain, ReasoningSketch};
use crate::error::{Error, Result};
use crate::segmenter::Thought;
use crate::tree::ReasoningTree;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
}

/// One transcript of the input corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub sample_id: String,
    pub transcript: String,
    /// Tag from the declared [`LabelSet`]; absent for unlabeled inference data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub metadata: RecordMetadata,
}

/// Maps two label tags onto the binary target (positive = 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelSet {
    pub positive: String,
    pub negative: String,
}

impl Default for LabelSet {
    fn default() -> Self {
        Self {
            positive: "positive".into(),
            negative: "negative".into(),
        }
    }
}

impl LabelSet {
    pub fn encode(&self, tag: Option<&str>) -> Result<Option<u8>> {
        match tag {
            None => Ok(None),
            Some(t) if t == self.positive => Ok(Some(1)),
            Some(t) if t == self.negative => Ok(Some(0)),
            Some(t) => Err(Error::Integrity(format!(
                "label {t:?} is not one of {:?}/{:?}",
                self.positive, self.negative
            ))),
        }
    }
}

/// Segmenter output for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedRecord {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub thoughts: Vec<Thought>,
}

/// Annotator output for one record, stored as `<sample_id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub chain: AnnotatedChain,
}

/// A built tree plus what featurization needs, stored as `<sample_id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub thought_tokens: Vec<usize>,
    pub sketch: ReasoningSketch,
    pub tree: ReasoningTree,
}

impl TreeDocument {
    pub fn from_chain(sample_id: &str, label: Option<String>, chain: &AnnotatedChain) -> Result<Self> {
        Ok(Self {
            sample_id: sample_id.to_string(),
            label,
            thought_tokens: chain.thoughts.iter().map(|t| t.token_count).collect(),
            sketch: chain.sketch.clone(),
            tree: crate::tree::build_tree(&chain.thoughts)?,
        })
    }
}

/// Reads one JSON value per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    parse_jsonl(BufReader::new(file))
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Jsonl { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp-write");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// File name for a sample: the id with anything outside `[A-Za-z0-9._-]` percent-encoded.
pub fn document_file_name(sample_id: &str) -> String {
    let mut out = String::with_capacity(sample_id.len() + 5);
    for b in sample_id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    if out.starts_with('.') {
        out.replace_range(0..1, "%2E");
    }
    out.push_str(".json");
    out
}

/// `*.json` files of a directory, sorted by name.
pub fn list_documents(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn ensure_unique_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Integrity(format!("duplicate sample_id {id:?}")));
        }
    }
    Ok(())
}

/// Train:test ratio such as `4:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: usize,
    pub test: usize,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 4, test: 1 }
    }
}

impl std::str::FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("split ratio {s:?} is not of the form TRAIN:TEST"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let train: usize = a.trim().parse().map_err(|_| bad())?;
        let test: usize = b.trim().parse().map_err(|_| bad())?;
        if train == 0 || test == 0 {
            return Err(bad());
        }
        Ok(Self { train, test })
    }
}

impl std::fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.train, self.test)
    }
}

/// Indices into the input, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class is shuffled with the seed and cut at the ratio.
///
/// Depends only on the seed and the order of `labels`.
pub fn stratified_split(labels: &[u8], ratio: SplitRatio, seed: u64) -> Result<Split> {
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let n_test = (idx.len() * ratio.test + (ratio.train + ratio.test) / 2) / (ratio.train + ratio.test);
        let n_test = n_test.min(idx.len());
        if n_test == idx.len() {
            return Err(Error::DegenerateDataset(format!("class {class} has no training samples")));
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    if train.iter().map(|&i| labels[i]).collect::<HashSet<_>>().len() < 2 {
        return Err(Error::DegenerateDataset("training split contains a single class".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_thousand_records_split() {
        let labels: Vec<u8> = (0..2000).map(|i| (i % 2) as u8).collect();
        let s = stratified_split(&labels, SplitRatio::default(), 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1600, 400));
        assert_eq!(s.test.iter().filter(|&&i| labels[i] == 1).count(), 200);
        assert_eq!(s, stratified_split(&labels, SplitRatio::default(), 0).unwrap());
        assert_ne!(s, stratified_split(&labels, SplitRatio::default(), 1).unwrap());
    }

    #[test]
    fn single_class_is_degenerate() {
        let err = stratified_split(&[1, 1, 1, 1, 1], SplitRatio::default(), 0).unwrap_err();
        assert_eq!(err.kind(), "DegenerateDataset");
        let err = stratified_split(&[1, 1, 1, 1, 0], "1:4".parse().unwrap(), 0).unwrap_err();
        assert_eq!(err.kind(), "DegenerateDataset");
        assert!(stratified_split(&[1, 1, 1, 1, 0], SplitRatio::default(), 0).is_ok());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("4:1".parse::<SplitRatio>().unwrap(), SplitRatio { train: 4, test: 1 });
        assert!("4".parse::<SplitRatio>().is_err());
        assert!("0:1".parse::<SplitRatio>().is_err());
        assert_eq!(SplitRatio::default().to_string(), "4:1");
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let text = "{\"sample_id\":\"a\",\"transcript\":\"x\"}\n\n{\"sample_id\":\"b\"\n";
        let err = parse_jsonl::<DatasetRecord>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Jsonl { line: 3, .. }), "{err}");
        assert_eq!(err.kind(), "JsonlParseError");
    }

    #[test]
    fn labels_and_ids() {
        let set = LabelSet::default();
        assert_eq!(set.encode(Some("positive")).unwrap(), Some(1));
        assert_eq!(set.encode(Some("negative")).unwrap(), Some(0));
        assert_eq!(set.encode(None).unwrap(), None);
        assert!(set.encode(Some("maybe")).is_err());
        assert!(ensure_unique_ids(["a", "b", "a"]).is_err());
        assert_eq!(document_file_name("q1/c 2"), "q1%2Fc%202.json");
        assert_eq!(document_file_name("..x"), "%2E.x.json");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let recs = vec![DatasetRecord {
            sample_id: "s".into(),
            transcript: "Hmm, ok".into(),
            label: Some("positive".into()),
            metadata: RecordMetadata {
                token_length: Some(2),
                ..Default::default()
            },
        }];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl::<DatasetRecord>(&path).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn split_partitions_and_keeps_both_classes(labels in prop::collection::vec(0u8..2, 2..200), seed in any::<u64>()) {
            if let Ok(s) = stratified_split(&labels, SplitRatio::default(), seed) {
                let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                prop_assert!(s.train.iter().any(|&i| labels[i] == 0) && s.train.iter().any(|&i| labels[i] == 1));
            }
        }
    }
}
