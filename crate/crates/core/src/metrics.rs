//! SQuAD-style scoring with French answer normalization: lowercase, strip
//! punctuation, split at apostrophes, drop determiner tokens, then exact
//! match and multiset token F1 maxed over the gold answers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::Serialize;

use crate::data::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    EmptyGoldList,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyGoldList => write!(f, "gold answer list is empty"),
        }
    }
}

/// Which tokens count as removable function words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// French determiners: le, la, les, l', du, des, au, aux, un, une.
    #[default]
    French,
    /// English articles: a, an, the. Secondary profile, not the default.
    English,
}

impl Profile {
    fn removable(self, token: &str) -> bool {
        match self {
            Profile::French => matches!(
                token,
                "le" | "la" | "les" | "l'" | "du" | "des" | "au" | "aux" | "un" | "une"
            ),
            Profile::English => matches!(token, "a" | "an" | "the"),
        }
    }
}

/// Lowercase, replace punctuation with spaces, split on whitespace and after
/// apostrophes (so `l'église` becomes `l'` + `église`), drop determiners,
/// rejoin single-spaced. Idempotent.
pub fn normalize_answer(text: &str) -> String {
    normalize_with(Profile::French, text)
}

pub fn normalize_with(profile: Profile, text: &str) -> String {
    normalized_tokens(profile, text).join(" ")
}

fn normalized_tokens(profile: Profile, text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        for lc in ch.to_lowercase() {
            // U+2019 counts as the apostrophe; everything neither
            // alphanumeric nor apostrophe becomes a space
            if lc == '\'' || lc == '\u{2019}' {
                cleaned.push('\'');
            } else if lc.is_alphanumeric() {
                cleaned.push(lc);
            } else {
                cleaned.push(' ');
            }
        }
    }
    let mut tokens = Vec::new();
    for word in cleaned.split_whitespace() {
        let mut rest = word;
        while let Some(idx) = rest.find('\'') {
            let (head, tail) = rest.split_at(idx + 1);
            if !head.is_empty() {
                tokens.push(head.to_string());
            }
            rest = tail;
        }
        if !rest.is_empty() {
            tokens.push(rest.to_string());
        }
    }
    tokens.retain(|t| !profile.removable(t));
    tokens
}

/// 1 when the normalized prediction equals some normalized gold answer.
pub fn exact_match(prediction: &str, golds: &[&str]) -> Result<u8, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyGoldList);
    }
    let p = normalize_answer(prediction);
    Ok(golds.iter().any(|g| normalize_answer(g) == p) as u8)
}

/// Multiset token overlap F1, maxed over gold answers. Both sides empty
/// after normalization scores 1; one side empty scores 0.
pub fn f1(prediction: &str, golds: &[&str]) -> Result<f64, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyGoldList);
    }
    let pred = normalized_tokens(Profile::French, prediction);
    let mut best = 0.0f64;
    for gold in golds {
        let gold = normalized_tokens(Profile::French, gold);
        best = best.max(pair_f1(&pred, &gold));
    }
    Ok(best)
}

fn pair_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleScore {
    pub id: String,
    pub em: u8,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Percent of exact matches.
    pub exact_match: f64,
    /// Percent token F1.
    pub f1: f64,
    pub per_example: Vec<ExampleScore>,
    /// Question ids with no prediction (scored zero).
    pub missing: Vec<String>,
}

impl EvalReport {
    /// `F1 / EM` row, one decimal, results-table style.
    pub fn summary_row(&self) -> String {
        format!("{:.1} / {:.1}", self.f1, self.exact_match)
    }

    pub fn text(&self) -> String {
        let mut s = format!(
            "exact_match: {:.2}\nf1: {:.2}\nexamples: {}\n",
            self.exact_match,
            self.f1,
            self.per_example.len()
        );
        if !self.missing.is_empty() {
            s.push_str(&format!("missing predictions: {}\n", self.missing.len()));
        }
        s
    }
}

/// Score a prediction map against every question in the dataset. Missing ids
/// are warned about and scored zero.
pub fn evaluate(predictions: &BTreeMap<String, String>, dataset: &Dataset) -> EvalReport {
    let mut per_example = Vec::new();
    let mut missing = Vec::new();
    for (_, qa) in dataset.examples() {
        let golds: Vec<&str> = qa.answers.iter().map(|a| a.text.as_str()).collect();
        let (em, f) = match predictions.get(&qa.id) {
            Some(pred) if !golds.is_empty() => (
                exact_match(pred, &golds).unwrap_or(0),
                f1(pred, &golds).unwrap_or(0.0),
            ),
            _ => {
                missing.push(qa.id.clone());
                (0, 0.0)
            }
        };
        per_example.push(ExampleScore {
            id: qa.id.clone(),
            em,
            f1: f,
        });
    }
    let n = per_example.len().max(1) as f64;
    EvalReport {
        exact_match: 100.0 * per_example.iter().map(|e| e.em as f64).sum::<f64>() / n,
        f1: 100.0 * per_example.iter().map(|e| e.f1).sum::<f64>() / n,
        per_example,
        missing,
    }
}
