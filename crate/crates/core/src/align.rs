//! Building translated QA corpora: exact-substring answer anchoring with a
//! ChrF fallback over word-boundary candidate spans, plus corpus BLEU for
//! translation-quality audits.
//!
//! ChrF here is the word-n-gram-enhanced variant: character orders 1..=6 and
//! word orders 1..=2, recall-weighted with β=2. The ChrF path only runs when
//! the answer is not a verbatim substring of its context; an instrumentation
//! counter makes that observable.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{char_len, Answer, Article, Dataset, Paragraph, QAExample};
use crate::mathx;

#[derive(Debug, Clone, PartialEq)]
pub enum AlignError {
    Json(String),
    MissingTranslations(Vec<String>),
    LengthMismatch { left: usize, right: usize },
    EmptyInput(&'static str),
    BadParams(String),
}

impl fmt::Display for AlignError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignError::Json(msg) => write!(f, "malformed translations JSONL: {msg}"),
            AlignError::MissingTranslations(ids) => {
                write!(f, "missing translations for {} example(s): ", ids.len())?;
                for (i, id) in ids.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{id}")?;
                }
                Ok(())
            }
            AlignError::LengthMismatch { left, right } => {
                write!(f, "parallel lists differ in length: {left} vs {right}")
            }
            AlignError::EmptyInput(what) => write!(f, "{what} is empty"),
            AlignError::BadParams(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Char,
    Word,
}

/// Sliding-window n-gram multiset. Char level runs over the text with
/// whitespace runs collapsed to single spaces; word level over whitespace
/// tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramProfile {
    pub order: usize,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

pub fn ngram_counts(text: &str, n: usize, level: Level) -> NGramProfile {
    debug_assert!(n >= 1);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    match level {
        Level::Char => {
            let collapsed: Vec<char> = {
                let mut out = Vec::new();
                let mut in_space = true; // leading whitespace dropped
                for ch in text.chars() {
                    if ch.is_whitespace() {
                        if !in_space {
                            out.push(' ');
                            in_space = true;
                        }
                    } else {
                        out.push(ch);
                        in_space = false;
                    }
                }
                while out.last() == Some(&' ') {
                    out.pop();
                }
                out
            };
            if collapsed.len() >= n {
                for w in collapsed.windows(n) {
                    *counts.entry(w.iter().collect()).or_insert(0) += 1;
                    total += 1;
                }
            }
        }
        Level::Word => {
            let words: Vec<&str> = text.split_whitespace().collect();
            if words.len() >= n {
                for w in words.windows(n) {
                    *counts.entry(w.join(" ")).or_insert(0) += 1;
                    total += 1;
                }
            }
        }
    }
    NGramProfile {
        order: n,
        counts,
        total,
    }
}

fn clipped_matches(a: &NGramProfile, b: &NGramProfile) -> u64 {
    let mut m = 0;
    for (gram, &ca) in &a.counts {
        if let Some(&cb) = b.counts.get(gram) {
            m += ca.min(cb);
        }
    }
    m
}

/// ChrF parameters plus the span-search knobs built on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    pub max_char_n: usize,
    pub max_word_n: usize,
    pub beta: f64,
    /// Candidates scoring below this are dropped.
    pub threshold: f64,
    /// Candidate character length relative to the answer length.
    pub len_band: (f64, f64),
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            max_char_n: 6,
            max_word_n: 2,
            beta: 2.0,
            threshold: 0.5,
            len_band: (0.5, 2.0),
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.max_char_n < 1 {
            return Err(AlignError::BadParams("max_char_n must be at least 1".into()));
        }
        if self.beta <= 0.0 {
            return Err(AlignError::BadParams("beta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(AlignError::BadParams("threshold must lie in [0, 1]".into()));
        }
        if self.len_band.0 > self.len_band.1 || self.len_band.0 < 0.0 {
            return Err(AlignError::BadParams("len_band must be a nonnegative range".into()));
        }
        Ok(())
    }
}

/// Character-and-word n-gram F-score: precision and recall averaged
/// arithmetically over orders with nonzero denominators, combined with
/// recall weight β.
pub fn chrf(hypothesis: &str, reference: &str, params: &AlignParams) -> f64 {
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut score_order = |n: usize, level: Level| {
        let h = ngram_counts(hypothesis, n, level);
        let r = ngram_counts(reference, n, level);
        let m = clipped_matches(&h, &r) as f64;
        if h.total > 0 {
            precisions.push(m / h.total as f64);
        }
        if r.total > 0 {
            recalls.push(m / r.total as f64);
        }
    };
    for n in 1..=params.max_char_n {
        score_order(n, Level::Char);
    }
    for n in 1..=params.max_word_n {
        score_order(n, Level::Word);
    }
    let avg = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let p = avg(&precisions);
    let r = avg(&recalls);
    let b2 = params.beta * params.beta;
    let den = b2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / den
    }
}

/// Corpus BLEU-4 over whitespace tokens: clipped n-gram precisions pooled
/// across sentence pairs, geometric mean, brevity penalty when the
/// hypothesis side is shorter. Zero matches at any order give zero.
pub fn bleu(hypotheses: &[&str], references: &[&str]) -> Result<f64, AlignError> {
    if hypotheses.len() != references.len() {
        return Err(AlignError::LengthMismatch {
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(AlignError::EmptyInput("hypothesis list"));
    }
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.split_whitespace().count() as u64;
        ref_len += r.split_whitespace().count() as u64;
        for n in 1..=4 {
            let hp = ngram_counts(h, n, Level::Word);
            let rp = ngram_counts(r, n, Level::Word);
            matches[n - 1] += clipped_matches(&hp, &rp);
            totals[n - 1] += hp.total;
        }
    }
    if matches.contains(&0) {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        log_sum += mathx::ln(matches[n] as f64 / totals[n] as f64);
    }
    let geo = mathx::exp(log_sum / 4.0);
    let bp = if hyp_len < ref_len && hyp_len > 0 {
        mathx::exp(1.0 - ref_len as f64 / hyp_len as f64)
    } else {
        1.0
    };
    Ok(bp * geo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Chrf,
    Dropped,
}

/// Resolution of one translated answer against its translated context.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanResolution {
    /// Half-open character span in the context, absent when dropped.
    pub span: Option<(usize, usize)>,
    pub method: Method,
    pub score: f64,
}

/// Span search with an instrumentation counter proving the exact-substring
/// fast path short-circuits ChrF.
pub struct SpanFinder {
    params: AlignParams,
    chrf_calls: Cell<u64>,
}

impl SpanFinder {
    pub fn new(params: AlignParams) -> Result<Self, AlignError> {
        params.validate()?;
        Ok(SpanFinder {
            params,
            chrf_calls: Cell::new(0),
        })
    }

    pub fn params(&self) -> &AlignParams {
        &self.params
    }

    /// ChrF evaluations performed so far.
    pub fn chrf_calls(&self) -> u64 {
        self.chrf_calls.get()
    }

    /// Case-folded scoring: the span search must re-anchor answers whose
    /// only defect is casing, which exact substring search rejects.
    fn scored_chrf(&self, hyp: &str, reference: &str) -> f64 {
        self.chrf_calls.set(self.chrf_calls.get() + 1);
        chrf(&hyp.to_lowercase(), &reference.to_lowercase(), &self.params)
    }

    /// Case-sensitive substring search first; otherwise the best
    /// word-boundary candidate span within the length band, scored by ChrF.
    /// Ties break to the earliest start, then the shortest span.
    pub fn find_answer_span(&self, context: &str, answer: &str) -> SpanResolution {
        if context.is_empty() || answer.is_empty() {
            return SpanResolution {
                span: None,
                method: Method::Dropped,
                score: 0.0,
            };
        }
        if let Some(byte_idx) = context.find(answer) {
            let start = context[..byte_idx].chars().count();
            return SpanResolution {
                span: Some((start, start + char_len(answer))),
                method: Method::Exact,
                score: 1.0,
            };
        }

        let words = word_boundaries(context);
        let answer_len = char_len(answer) as f64;
        let (lo, hi) = (
            self.params.len_band.0 * answer_len,
            self.params.len_band.1 * answer_len,
        );
        let chars: Vec<char> = context.chars().collect();
        let mut best: Option<((usize, usize), f64)> = None;
        for i in 0..words.len() {
            for j in i..words.len() {
                let start = words[i].0;
                let end = words[j].1;
                let len = (end - start) as f64;
                if len < lo {
                    continue;
                }
                if len > hi {
                    break;
                }
                let candidate: String = chars[start..end].iter().collect();
                let score = self.scored_chrf(&candidate, answer);
                let better = match &best {
                    None => true,
                    Some((span, s)) => {
                        score > *s
                            || (score == *s
                                && (start < span.0 || (start == span.0 && end < span.1)))
                    }
                };
                if better {
                    best = Some(((start, end), score));
                }
            }
        }
        match best {
            Some((span, score)) if score >= self.params.threshold => SpanResolution {
                span: Some(span),
                method: Method::Chrf,
                score,
            },
            Some((_, score)) => SpanResolution {
                span: None,
                method: Method::Dropped,
                score,
            },
            None => SpanResolution {
                span: None,
                method: Method::Dropped,
                score: 0.0,
            },
        }
    }
}

/// One-shot convenience wrapper over `SpanFinder`.
pub fn find_answer_span(
    context: &str,
    answer: &str,
    params: &AlignParams,
) -> Result<SpanResolution, AlignError> {
    let finder = SpanFinder::new(params.clone())?;
    Ok(finder.find_answer_span(context, answer))
}

/// (start, end) character offsets of each whitespace-delimited word.
fn word_boundaries(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut idx = 0;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, idx));
            }
        } else if start.is_none() {
            start = Some(idx);
        }
        idx += 1;
    }
    if let Some(s) = start {
        out.push((s, idx));
    }
    out
}

/// One translated triple, keyed to its source example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub id: String,
    pub context_fr: String,
    pub question_fr: String,
    pub answer_fr: String,
}

/// Parse the JSON Lines translations format (one object per line; blank
/// lines ignored).
pub fn parse_translations(text: &str) -> Result<BTreeMap<String, Translation>, AlignError> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tr: Translation = serde_json::from_str(line)
            .map_err(|e| AlignError::Json(format!("line {}: {e}", lineno + 1)))?;
        out.insert(tr.id.clone(), tr);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignReport {
    pub total: usize,
    pub exact: usize,
    pub chrf: usize,
    pub dropped: usize,
    pub drop_rate: f64,
    /// Score counts in ten equal bins over [0, 1].
    pub score_histogram: [u64; 10],
    pub chrf_calls: u64,
}

impl AlignReport {
    pub fn text(&self) -> String {
        let mut s = format!(
            "aligned {} examples: {} exact, {} chrf, {} dropped (drop rate {:.1}%)\n",
            self.total,
            self.exact,
            self.chrf,
            self.dropped,
            100.0 * self.drop_rate
        );
        s.push_str(&format!("chrf calls: {}\nscore histogram:\n", self.chrf_calls));
        for (i, count) in self.score_histogram.iter().enumerate() {
            s.push_str(&format!(
                "  [{:.1}, {}{:.1}) {}\n",
                i as f64 / 10.0,
                if i == 9 { "=" } else { "" },
                (i + 1) as f64 / 10.0,
                count
            ));
        }
        s
    }
}

/// Build a dataset from pre-translated triples. Every source example needs a
/// translation; unresolvable answers are dropped (counted, not errors).
/// Within a source paragraph, examples sharing a translated context are
/// regrouped into one paragraph.
pub fn align_corpus(
    source: &Dataset,
    translations: &BTreeMap<String, Translation>,
    params: &AlignParams,
) -> Result<(Dataset, AlignReport), AlignError> {
    let missing: Vec<String> = source
        .examples()
        .filter(|(_, qa)| !translations.contains_key(&qa.id))
        .map(|(_, qa)| qa.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AlignError::MissingTranslations(missing));
    }

    let finder = SpanFinder::new(params.clone())?;
    let mut report = AlignReport {
        total: 0,
        exact: 0,
        chrf: 0,
        dropped: 0,
        drop_rate: 0.0,
        score_histogram: [0; 10],
        chrf_calls: 0,
    };
    let mut out = Dataset::empty();

    for article in &source.data {
        let mut paragraphs: Vec<Paragraph> = Vec::new();
        for paragraph in &article.paragraphs {
            // bucket by translated context, preserving first-seen order
            let mut order: Vec<String> = Vec::new();
            let mut buckets: BTreeMap<String, Vec<QAExample>> = BTreeMap::new();
            for qa in &paragraph.qas {
                let tr = &translations[&qa.id];
                report.total += 1;
                let resolution = finder.find_answer_span(&tr.context_fr, &tr.answer_fr);
                let bin = ((resolution.score * 10.0) as usize).min(9);
                report.score_histogram[bin] += 1;
                match resolution.method {
                    Method::Exact => report.exact += 1,
                    Method::Chrf => report.chrf += 1,
                    Method::Dropped => {
                        report.dropped += 1;
                        continue;
                    }
                }
                let (start, end) = resolution.span.expect("resolved spans carry offsets");
                let text: String = tr.context_fr.chars().skip(start).take(end - start).collect();
                debug_assert_eq!(char_len(&text), end - start);
                let example = QAExample {
                    id: qa.id.clone(),
                    question: tr.question_fr.clone(),
                    answers: vec![Answer {
                        text,
                        answer_start: start,
                    }],
                };
                if !buckets.contains_key(&tr.context_fr) {
                    order.push(tr.context_fr.clone());
                }
                buckets.entry(tr.context_fr.clone()).or_default().push(example);
            }
            for context in order {
                paragraphs.push(Paragraph {
                    qas: buckets.remove(&context).unwrap_or_default(),
                    context,
                });
            }
        }
        if !paragraphs.is_empty() {
            out.data.push(Article {
                title: article.title.clone(),
                paragraphs,
            });
        }
    }
    report.drop_rate = if report.total == 0 {
        0.0
    } else {
        report.dropped as f64 / report.total as f64
    };
    report.chrf_calls = finder.chrf_calls();
    Ok((out, report))
}

/// Corpus BLEU of machine output against manually corrected references,
/// reported ×100 per field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationAudit {
    pub bleu_questions: f64,
    pub bleu_contexts: f64,
}

impl TranslationAudit {
    pub fn text(&self) -> String {
        format!(
            "BLEU questions: {:.2}\nBLEU contexts:  {:.2}\n",
            self.bleu_questions, self.bleu_contexts
        )
    }
}

pub fn audit_translation_quality(
    hyp_questions: &[&str],
    corrected_questions: &[&str],
    hyp_contexts: &[&str],
    corrected_contexts: &[&str],
) -> Result<TranslationAudit, AlignError> {
    Ok(TranslationAudit {
        bleu_questions: 100.0 * bleu(hyp_questions, corrected_questions)?,
        bleu_contexts: 100.0 * bleu(hyp_contexts, corrected_contexts)?,
    })
}

/// Ids present in the source but untranslated; used by pipeline callers for
/// exhaustive error listings.
pub fn missing_translation_ids(
    source: &Dataset,
    translations: &BTreeMap<String, Translation>,
) -> Vec<String> {
    let have: BTreeSet<&String> = translations.keys().collect();
    source
        .examples()
        .filter(|(_, qa)| !have.contains(&qa.id))
        .map(|(_, qa)| qa.id.clone())
        .collect()
}
