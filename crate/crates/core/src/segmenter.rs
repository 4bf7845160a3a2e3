//! Splitting a raw reasoning transcript into an ordered list of thoughts.
//!
//! A new thought begins at every occurrence of a separator marker (for
//! example "Wait" or "Alternatively"). The marker stays at the head of the
//! thought it opens, so joining all thought texts reproduces the transcript
//! exactly.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Markers used by the DeepSeek-R1 family (DeepSeek-R1, the 32B distill, QwQ-32B).
pub const BASE_SEPARATORS: &[&str] = &[
    "Alternatively",
    "Hmm",
    "Let me verify",
    "let's verify",
    "To verify",
    "Wait",
    "Verify",
];

/// Additional markers for models with terser transition phrasing.
pub const EXTENDED_SEPARATORS: &[&str] = &[
    "Let's confirm",
    "Let's check",
    "Another example",
    "But let's",
    "wait",
    "No:",
    "no:",
    "Now",
];

/// A named set of literal separator markers.
///
/// Matching is case-sensitive. Separators are kept sorted longest-first
/// (ties broken lexicographically) so that the scan tries the longest
/// candidate at every position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeparatorProfile {
    name: String,
    separators: Vec<String>,
}

#[derive(Deserialize)]
struct RawProfile {
    name: String,
    separators: Vec<String>,
}

impl<'de> Deserialize<'de> for SeparatorProfile {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = RawProfile::deserialize(de)?;
        SeparatorProfile::new(raw.name, raw.separators).map_err(serde::de::Error::custom)
    }
}

impl SeparatorProfile {
    pub fn new(name: impl Into<String>, separators: Vec<String>) -> Result<Self> {
        let name = name.into();
        if separators.is_empty() {
            return Err(Error::InvalidProfile(format!("profile {name:?} has no separators")));
        }
        if separators.iter().any(String::is_empty) {
            return Err(Error::InvalidProfile(format!(
                "profile {name:?} contains an empty separator"
            )));
        }
        let mut separators = separators;
        separators.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        separators.dedup();
        Ok(Self { name, separators })
    }

    /// The base marker set.
    pub fn deepseek_family() -> Self {
        Self::new("deepseek-family", owned(BASE_SEPARATORS)).expect("builtin profile is valid")
    }

    /// Base markers plus the extension set.
    pub fn extended() -> Self {
        let mut all = owned(BASE_SEPARATORS);
        all.extend(owned(EXTENDED_SEPARATORS));
        Self::new("extended", all).expect("builtin profile is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "deepseek-family" => Some(Self::deepseek_family()),
            "extended" => Some(Self::extended()),
            _ => None,
        }
    }

    /// Resolves a builtin profile name, or loads a JSON profile file
    /// `{"name": ..., "separators": [...]}`.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::from_json_file(path);
        }
        Err(Error::InvalidProfile(format!(
            "unknown profile {name_or_path:?} (expected deepseek-family, extended, or a JSON file)"
        )))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn separators(&self) -> &[String] {
        &self.separators
    }

    /// Longest separator that starts at byte offset `pos` of `text`.
    fn match_at(&self, text: &str, pos: usize) -> Option<usize> {
        let rest = &text.as_bytes()[pos..];
        self.separators
            .iter()
            .find(|sep| rest.starts_with(sep.as_bytes()))
            .map(String::len)
    }
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Pluggable token counter. The default counts whitespace-delimited words.
pub trait Tokenizer: Send + Sync {
    fn count_tokens(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn count_tokens(&self, text: &str) -> usize {
        word_count(text)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_ascii_whitespace().count()
}

/// One contiguous segment of a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thought {
    pub index: usize,
    pub text: String,
    pub word_count: usize,
    pub token_count: usize,
}

/// Segmentation settings: a profile plus the tokenizer used for `token_count`.
#[derive(Clone)]
pub struct Segmenter {
    profile: SeparatorProfile,
    tokenizer: Arc<dyn Tokenizer>,
}

impl Segmenter {
    pub fn new(profile: SeparatorProfile) -> Self {
        Self {
            profile,
            tokenizer: Arc::new(WordTokenizer),
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn profile(&self) -> &SeparatorProfile {
        &self.profile
    }

    pub fn split(&self, transcript: &str) -> Result<Vec<Thought>> {
        let bounds = split_offsets(transcript, &self.profile)?;
        Ok(bounds
            .windows(2)
            .enumerate()
            .map(|(index, w)| {
                let text = &transcript[w[0]..w[1]];
                Thought {
                    index,
                    text: text.to_string(),
                    word_count: word_count(text),
                    token_count: self.tokenizer.count_tokens(text),
                }
            })
            .collect())
    }
}

/// Splits `transcript` at every separator occurrence, counting words as tokens.
pub fn split_thoughts(transcript: &str, profile: &SeparatorProfile) -> Result<Vec<Thought>> {
    Segmenter::new(profile.clone()).split(transcript)
}

/// Byte offsets of thought boundaries, including 0 and `transcript.len()`.
fn split_offsets(transcript: &str, profile: &SeparatorProfile) -> Result<Vec<usize>> {
    if transcript.is_empty() {
        return Err(Error::EmptyInput("transcript"));
    }
    let bytes = transcript.as_bytes();
    let mut bounds = vec![0];
    let mut pos = 0;
    while pos < bytes.len() {
        // Separators are non-empty; a match can only begin on a char boundary
        // because the first byte of a separator is never a UTF-8 continuation byte.
        if transcript.is_char_boundary(pos) {
            if let Some(len) = profile.match_at(transcript, pos) {
                if pos > 0 {
                    bounds.push(pos);
                }
                pos += len;
                continue;
            }
        }
        pos += 1;
    }
    bounds.push(bytes.len());
    Ok(bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_on_markers_and_keeps_them() {
        let p = SeparatorProfile::deepseek_family();
        let t = split_thoughts("Compute A=1. Wait, maybe 2. Alternatively, try 3.", &p).unwrap();
        let texts: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["Compute A=1. ", "Wait, maybe 2. ", "Alternatively, try 3."]);
        assert_eq!(t.iter().map(|t| t.index).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(t[1].word_count, 3);
        assert_eq!(t[1].token_count, 3);
    }

    #[test]
    fn no_separator_is_one_thought() {
        let p = SeparatorProfile::deepseek_family();
        let t = split_thoughts("Only one line of reasoning.", &p).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].text, "Only one line of reasoning.");
    }

    #[test]
    fn empty_transcript_is_rejected() {
        let p = SeparatorProfile::deepseek_family();
        assert!(matches!(split_thoughts("", &p), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn leading_separator_starts_thought_zero() {
        let p = SeparatorProfile::deepseek_family();
        let t = split_thoughts("Wait, a. Hmm, b.", &p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].text, "Wait, a. ");
    }

    #[test]
    fn longest_marker_wins_and_is_consumed() {
        let p = SeparatorProfile::extended();
        // "But let's" covers the "let's verify" that starts inside it.
        let t = split_thoughts("x. But let's verify it.", &p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].text, "But let's verify it.");
        // "Let me verify" beats "Verify"-like shorter matches at the same position.
        let p = SeparatorProfile::deepseek_family();
        let t = split_thoughts("a Let me verify b", &p).unwrap();
        assert_eq!(t[1].text, "Let me verify b");
    }

    #[test]
    fn matching_is_case_sensitive() {
        let p = SeparatorProfile::deepseek_family();
        assert_eq!(split_thoughts("a wait b", &p).unwrap().len(), 1);
        assert_eq!(split_thoughts("a wait b", &SeparatorProfile::extended()).unwrap().len(), 2);
    }

    #[test]
    fn multibyte_text_is_preserved() {
        let p = SeparatorProfile::deepseek_family();
        let s = "π ≈ 3.14 → Wait, é ∑ Hmm ok";
        let t = split_thoughts(s, &p).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.iter().map(|t| t.text.as_str()).collect::<String>(), s);
    }

    #[test]
    fn profile_validation_and_ordering() {
        assert!(SeparatorProfile::new("x", vec![]).is_err());
        assert!(SeparatorProfile::new("x", vec!["a".into(), "".into()]).is_err());
        let p = SeparatorProfile::new("x", vec!["ab".into(), "abcd".into(), "b".into()]).unwrap();
        assert_eq!(p.separators(), ["abcd", "ab", "b"]);
        let parsed: SeparatorProfile =
            serde_json::from_str(r#"{"name":"c","separators":["No","Now"]}"#).unwrap();
        assert_eq!(parsed.separators(), ["Now", "No"]);
        assert!(serde_json::from_str::<SeparatorProfile>(r#"{"name":"c","separators":[]}"#).is_err());
    }

    #[test]
    fn custom_tokenizer_hook() {
        struct Chars;
        impl Tokenizer for Chars {
            fn count_tokens(&self, text: &str) -> usize {
                text.chars().count()
            }
        }
        let s = Segmenter::new(SeparatorProfile::deepseek_family()).with_tokenizer(Arc::new(Chars));
        let t = s.split("ab Wait cd").unwrap();
        assert_eq!(t[0].token_count, 3);
        assert_eq!(t[1].word_count, 2);
    }

    fn filler() -> impl Strategy<Value = String> {
        // Alphabet that can never spell any separator.
        proptest::string::string_regex("[0-9 .,=+\n]{1,12}").unwrap()
    }

    proptest! {
        #[test]
        fn lossless_and_count_law(
            head in filler(),
            parts in proptest::collection::vec((0usize..15, filler()), 0..12),
        ) {
            let p = SeparatorProfile::extended();
            let all: Vec<&str> = BASE_SEPARATORS.iter().chain(EXTENDED_SEPARATORS).copied().collect();
            let mut s = head.clone();
            for (k, f) in &parts {
                s.push_str(all[*k]);
                s.push_str(f);
            }
            let t = split_thoughts(&s, &p).unwrap();
            prop_assert_eq!(t.iter().map(|t| t.text.as_str()).collect::<String>(), s.clone());
            prop_assert_eq!(t.len(), 1 + parts.len());
            prop_assert_eq!(split_thoughts(&s, &p).unwrap(), t);
        }
    }
}
