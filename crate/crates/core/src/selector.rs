//! Best-of-N selection over scored candidate responses.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate response, as stored in the candidates JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub question_id: String,
    pub candidate_id: usize,
    /// Path of the candidate's tree document, relative to the candidates file.
    pub transcript_ref: String,
    pub extracted_answer: String,
    pub token_length: usize,
    /// Scores from outside scorers (outcome or process reward models), by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external_scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

impl Candidate {
    pub fn answer(&self) -> &str {
        self.extracted_answer.trim()
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.gold_answer.as_deref().map(|g| g.trim() == self.answer())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    OursBest,
    OursVote,
    LengthBest,
    Vote,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::OursBest => "ours-best",
            Strategy::OursVote => "ours-vote",
            Strategy::LengthBest => "length-best",
            Strategy::Vote => "vote",
        }
    }

    pub fn needs_scores(self) -> bool {
        matches!(self, Strategy::OursBest | Strategy::OursVote)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours-best" => Ok(Strategy::OursBest),
            "ours-vote" => Ok(Strategy::OursVote),
            "length-best" => Ok(Strategy::LengthBest),
            "vote" => Ok(Strategy::Vote),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected ours-best, ours-vote, length-best or vote)"
            ))),
        }
    }
}

fn check(cands: &[Candidate], scores: Option<&[f64]>) -> Result<()> {
    if cands.is_empty() {
        return Err(Error::EmptyInput("candidates"));
    }
    if let Some(s) = scores {
        if s.len() != cands.len() {
            return Err(Error::Shape {
                expected: cands.len(),
                got: s.len(),
            });
        }
        if s.iter().any(|v| v.is_nan()) {
            return Err(Error::Integrity("candidate score is NaN".into()));
        }
    }
    Ok(())
}

/// Highest score; ties go to the lowest candidate id.
pub fn ours_best(cands: &[Candidate], scores: &[f64]) -> Result<usize> {
    check(cands, Some(scores))?;
    let best = (0..cands.len())
        .max_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(cands[b].candidate_id.cmp(&cands[a].candidate_id))
        })
        .unwrap();
    Ok(cands[best].candidate_id)
}

/// Answer with the largest summed score; ties go to the answer seen first.
pub fn ours_vote(cands: &[Candidate], scores: &[f64]) -> Result<String> {
    check(cands, Some(scores))?;
    weighted_vote(cands, scores)
}

/// Fewest tokens; ties go to the lowest candidate id.
pub fn length_best(cands: &[Candidate]) -> Result<usize> {
    check(cands, None)?;
    Ok(cands
        .iter()
        .min_by_key(|c| (c.token_length, c.candidate_id))
        .unwrap()
        .candidate_id)
}

/// Most frequent answer; ties go to the answer seen first.
pub fn majority_vote(cands: &[Candidate]) -> Result<String> {
    check(cands, None)?;
    weighted_vote(cands, &vec![1.0; cands.len()])
}

fn weighted_vote(cands: &[Candidate], weights: &[f64]) -> Result<String> {
    let mut totals: Vec<(&str, f64)> = Vec::new();
    for (c, &w) in cands.iter().zip(weights) {
        match totals.iter_mut().find(|(a, _)| *a == c.answer()) {
            Some(entry) => entry.1 += w,
            None => totals.push((c.answer(), w)),
        }
    }
    let mut best = 0;
    for (i, t) in totals.iter().enumerate() {
        if t.1 > totals[best].1 {
            best = i;
        }
    }
    Ok(totals[best].0.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub question_id: String,
    /// Set by strategies that pick a single candidate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<usize>,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

/// Applies a strategy to one question's candidates.
pub fn select(strategy: Strategy, cands: &[Candidate], scores: Option<&[f64]>) -> Result<Selection> {
    check(cands, scores)?;
    let scores = || scores.ok_or_else(|| Error::Config(format!("strategy {} needs scores", strategy.as_str())));
    let (candidate_id, answer) = match strategy {
        Strategy::OursBest => {
            let id = ours_best(cands, scores()?)?;
            (Some(id), None)
        }
        Strategy::LengthBest => (Some(length_best(cands)?), None),
        Strategy::OursVote => (None, Some(ours_vote(cands, scores()?)?)),
        Strategy::Vote => (None, Some(majority_vote(cands)?)),
    };
    let answer = match (candidate_id, answer) {
        (_, Some(a)) => a,
        (Some(id), None) => cands.iter().find(|c| c.candidate_id == id).unwrap().answer().to_string(),
        (None, None) => unreachable!(),
    };
    let gold = cands.iter().find_map(|c| c.gold_answer.as_deref());
    Ok(Selection {
        question_id: cands[0].question_id.clone(),
        candidate_id,
        correct: gold.map(|g| g.trim() == answer),
        answer,
    })
}

/// Candidates grouped by question, questions in first-seen order, candidates in file order.
pub fn group_by_question(cands: Vec<Candidate>) -> Vec<Vec<Candidate>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    for c in cands {
        if !groups.contains_key(&c.question_id) {
            order.push(c.question_id.clone());
        }
        groups.entry(c.question_id.clone()).or_default().push(c);
    }
    order.into_iter().map(|q| groups.remove(&q).unwrap()).collect()
}

/// Fraction of selections marked correct, over those with a gold answer.
pub fn selection_accuracy(selections: &[Selection]) -> Option<f64> {
    let judged: Vec<bool> = selections.iter().filter_map(|s| s.correct).collect();
    if judged.is_empty() {
        None
    } else {
        Some(judged.iter().filter(|&&c| c).count() as f64 / judged.len() as f64)
    }
}
