//! SQuAD-v1.1-shaped datasets: parsing with span validation, windowed
//! featurization for long contexts, validation splitting, concatenation for
//! mixed-data training, and corpus descriptives.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds;
use crate::tokenizer::{Tokenizer, CLS, PAD, SEP};

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Json(String),
    /// answer_start does not reproduce the answer text inside the context.
    SpanInvariant { id: String, detail: String },
    NoAnswers { id: String },
    EmptyDataset,
    BadFraction { fraction: f64 },
    /// max_len leaves no room for the question plus the three specials.
    WindowTooSmall { max_len: usize, question_tokens: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Json(msg) => write!(f, "malformed dataset JSON: {msg}"),
            DataError::SpanInvariant { id, detail } => {
                write!(f, "answer span invariant violated for example {id}: {detail}")
            }
            DataError::NoAnswers { id } => write!(f, "example {id} has no answers"),
            DataError::EmptyDataset => write!(f, "dataset holds no examples"),
            DataError::BadFraction { fraction } => {
                write!(f, "fraction {fraction} outside (0, 1)")
            }
            DataError::WindowTooSmall {
                max_len,
                question_tokens,
            } => write!(
                f,
                "max_len {max_len} cannot hold {question_tokens} question tokens plus specials"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<QAExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(default = "default_version")]
    pub version: String,
    pub data: Vec<Article>,
}

fn default_version() -> String {
    "1.1".to_string()
}

/// Slice a string by character (not byte) offsets, the dataset convention.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

impl Dataset {
    pub fn empty() -> Self {
        Dataset {
            version: default_version(),
            data: Vec::new(),
        }
    }

    pub fn title_count(&self) -> usize {
        self.data.len()
    }

    pub fn paragraph_count(&self) -> usize {
        self.data.iter().map(|a| a.paragraphs.len()).sum()
    }

    pub fn question_count(&self) -> usize {
        self.data
            .iter()
            .flat_map(|a| &a.paragraphs)
            .map(|p| p.qas.len())
            .sum()
    }

    pub fn answer_count(&self) -> usize {
        self.data
            .iter()
            .flat_map(|a| &a.paragraphs)
            .flat_map(|p| &p.qas)
            .map(|qa| qa.answers.len())
            .sum()
    }

    /// (context, example) pairs in document order.
    pub fn examples(&self) -> impl Iterator<Item = (&str, &QAExample)> {
        self.data
            .iter()
            .flat_map(|a| &a.paragraphs)
            .flat_map(|p| p.qas.iter().map(move |qa| (p.context.as_str(), qa)))
    }

    pub fn example_ids(&self) -> BTreeSet<String> {
        self.examples().map(|(_, qa)| qa.id.clone()).collect()
    }

    /// Every answer's character span must reproduce its text, and every
    /// example must carry at least one answer.
    pub fn validate(&self) -> Result<(), DataError> {
        for (context, qa) in self.examples() {
            if qa.answers.is_empty() {
                return Err(DataError::NoAnswers { id: qa.id.clone() });
            }
            for ans in &qa.answers {
                let len = char_len(&ans.text);
                let got = char_slice(context, ans.answer_start, ans.answer_start + len);
                if got != ans.text {
                    return Err(DataError::SpanInvariant {
                        id: qa.id.clone(),
                        detail: format!(
                            "context[{}..{}] is {:?}, answer text is {:?}",
                            ans.answer_start,
                            ans.answer_start + len,
                            got,
                            ans.text
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parse and validate a SQuAD v1.1 JSON document.
pub fn parse_squad(bytes: &[u8]) -> Result<Dataset, DataError> {
    let dataset: Dataset =
        serde_json::from_slice(bytes).map_err(|e| DataError::Json(e.to_string()))?;
    dataset.validate()?;
    Ok(dataset)
}

/// Canonical JSON emission; `parse(emit(parse(x)))` is a fixed point.
pub fn emit_squad(dataset: &Dataset) -> String {
    serde_json::to_string_pretty(dataset).expect("dataset serializes")
}

/// Split at question granularity: `fraction` of the examples drawn
/// uniformly without replacement into the validation set.
pub fn split_validation(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::BadFraction { fraction });
    }
    let total = dataset.question_count();
    if total == 0 {
        return Err(DataError::EmptyDataset);
    }
    let val_count = ((total as f64 * fraction) + 0.5) as usize;
    let val_count = val_count.clamp(1, total - 1);

    // partial Fisher-Yates over example indices
    let mut rng = seeds::stream(seed, "data-split");
    let mut indices: Vec<usize> = (0..total).collect();
    for i in 0..val_count {
        let j = rng.gen_range(i..total);
        indices.swap(i, j);
    }
    let val_set: BTreeSet<usize> = indices[..val_count].iter().cloned().collect();

    let mut train = Dataset::empty();
    let mut val = Dataset::empty();
    let mut k = 0;
    for article in &dataset.data {
        let mut train_article = Article {
            title: article.title.clone(),
            paragraphs: Vec::new(),
        };
        let mut val_article = train_article.clone();
        for paragraph in &article.paragraphs {
            let mut train_qas = Vec::new();
            let mut val_qas = Vec::new();
            for qa in &paragraph.qas {
                if val_set.contains(&k) {
                    val_qas.push(qa.clone());
                } else {
                    train_qas.push(qa.clone());
                }
                k += 1;
            }
            if !train_qas.is_empty() {
                train_article.paragraphs.push(Paragraph {
                    context: paragraph.context.clone(),
                    qas: train_qas,
                });
            }
            if !val_qas.is_empty() {
                val_article.paragraphs.push(Paragraph {
                    context: paragraph.context.clone(),
                    qas: val_qas,
                });
            }
        }
        if !train_article.paragraphs.is_empty() {
            train.data.push(train_article);
        }
        if !val_article.paragraphs.is_empty() {
            val.data.push(val_article);
        }
    }
    Ok((train, val))
}

/// Concatenate two datasets. Overlapping example ids are namespaced with
/// `0:`/`1:` source tags so the union stays unambiguous.
pub fn concat_datasets(a: &Dataset, b: &Dataset) -> Dataset {
    let ids_a = a.example_ids();
    let collision = b.examples().any(|(_, qa)| ids_a.contains(&qa.id));
    let mut out = Dataset::empty();
    for (tag, src) in [("0", a), ("1", b)] {
        for article in &src.data {
            let mut article = article.clone();
            if collision {
                for p in &mut article.paragraphs {
                    for qa in &mut p.qas {
                        qa.id = format!("{tag}:{}", qa.id);
                    }
                }
            }
            out.data.push(article);
        }
    }
    out
}

/// Descriptive statistics in the word-level granularity of corpus tables:
/// whitespace tokens, sentences split on `.`/`!`/`?` followed by space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub titles: usize,
    pub paragraphs: usize,
    pub questions: usize,
    pub answers: usize,
    pub sentences_per_paragraph: f64,
    pub tokens_per_paragraph: f64,
    pub chars_per_paragraph: f64,
    pub tokens_per_question: f64,
    pub chars_per_question: f64,
    pub tokens_per_answer: f64,
    pub chars_per_answer: f64,
}

fn sentence_count(text: &str) -> usize {
    if text.trim().is_empty() {
        return 0;
    }
    let chars: Vec<char> = text.chars().collect();
    let mut boundaries = 0;
    for i in 0..chars.len().saturating_sub(1) {
        if matches!(chars[i], '.' | '!' | '?') && chars[i + 1].is_whitespace() {
            boundaries += 1;
        }
    }
    boundaries + 1
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn corpus_stats(dataset: &Dataset) -> StatsReport {
    let mut sent = 0.0;
    let mut ptok = 0.0;
    let mut pchr = 0.0;
    let mut qtok = 0.0;
    let mut qchr = 0.0;
    let mut atok = 0.0;
    let mut achr = 0.0;
    for article in &dataset.data {
        for p in &article.paragraphs {
            sent += sentence_count(&p.context) as f64;
            ptok += word_count(&p.context) as f64;
            pchr += char_len(&p.context) as f64;
            for qa in &p.qas {
                qtok += word_count(&qa.question) as f64;
                qchr += char_len(&qa.question) as f64;
                for ans in &qa.answers {
                    atok += word_count(&ans.text) as f64;
                    achr += char_len(&ans.text) as f64;
                }
            }
        }
    }
    let paragraphs = dataset.paragraph_count();
    let questions = dataset.question_count();
    let answers = dataset.answer_count();
    StatsReport {
        titles: dataset.title_count(),
        paragraphs,
        questions,
        answers,
        sentences_per_paragraph: mean(sent, paragraphs),
        tokens_per_paragraph: mean(ptok, paragraphs),
        chars_per_paragraph: mean(pchr, paragraphs),
        tokens_per_question: mean(qtok, questions),
        chars_per_question: mean(qchr, questions),
        tokens_per_answer: mean(atok, answers),
        chars_per_answer: mean(achr, answers),
    }
}

impl StatsReport {
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<42}{:>12}\n", "# titles", self.titles));
        s.push_str(&format!("{:<42}{:>12}\n", "# paragraphs", self.paragraphs));
        s.push_str(&format!(
            "{:<42}{:>12}\n",
            "  sentences / tokens / chars (mean)",
            format!(
                "{:.1} / {:.1} / {:.1}",
                self.sentences_per_paragraph, self.tokens_per_paragraph, self.chars_per_paragraph
            )
        ));
        s.push_str(&format!("{:<42}{:>12}\n", "# questions", self.questions));
        s.push_str(&format!(
            "{:<42}{:>12}\n",
            "  tokens / chars (mean)",
            format!("{:.1} / {:.1}", self.tokens_per_question, self.chars_per_question)
        ));
        s.push_str(&format!("{:<42}{:>12}\n", "# answers", self.answers));
        s.push_str(&format!(
            "{:<42}{:>12}\n",
            "  tokens / chars (mean)",
            format!("{:.1} / {:.1}", self.tokens_per_answer, self.chars_per_answer)
        ));
        s
    }

    pub fn csv(&self) -> String {
        format!(
            "titles,paragraphs,questions,answers,sentences_per_paragraph,tokens_per_paragraph,chars_per_paragraph,tokens_per_question,chars_per_question,tokens_per_answer,chars_per_answer\n{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            self.titles,
            self.paragraphs,
            self.questions,
            self.answers,
            self.sentences_per_paragraph,
            self.tokens_per_paragraph,
            self.chars_per_paragraph,
            self.tokens_per_question,
            self.chars_per_question,
            self.tokens_per_answer,
            self.chars_per_answer,
        )
    }
}

/// One training window over a (question, context) pair:
/// `[CLS] question [SEP] context-window [SEP]`, padded to `max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub example_id: String,
    pub window_index: usize,
    pub input_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
    pub type_ids: Vec<usize>,
    /// Character range in the context for each context token; `None` for
    /// specials, question tokens, and padding.
    pub offsets: Vec<Option<(usize, usize)>>,
    /// Token positions of the gold answer, when it sits fully inside this
    /// window.
    pub start_position: Option<usize>,
    pub end_position: Option<usize>,
}

impl Feature {
    /// Indices that may carry an answer (real context tokens).
    pub fn context_token_range(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.input_ids.len()).filter(|&i| self.offsets[i].is_some())
    }
}

/// Window a (question, context) pair into overlapping features whose starts
/// advance by `stride` context tokens. The gold span (first answer) converts
/// to token positions when fully inside a window, else stays `None`.
pub fn featurize(
    example: &QAExample,
    context: &str,
    tokenizer: &Tokenizer,
    max_len: usize,
    stride: usize,
) -> Result<Vec<Feature>, DataError> {
    let q_spans = tokenizer.tokenize(&example.question);
    if max_len <= q_spans.len() + 3 {
        return Err(DataError::WindowTooSmall {
            max_len,
            question_tokens: q_spans.len(),
        });
    }
    let stride = stride.max(1);
    let capacity = max_len - q_spans.len() - 3;
    let ctx_spans = tokenizer.tokenize(context);

    // Token indices of the gold span. Boundaries must align exactly so a
    // decoded span always reproduces the answer text; otherwise the window
    // trains as answer-absent.
    let gold = example.answers.first().map(|ans| {
        let a0 = ans.answer_start;
        let a1 = a0 + char_len(&ans.text);
        let ts = ctx_spans.iter().position(|s| s.start == a0);
        let te = ctx_spans.iter().position(|s| s.end == a1);
        (ts, te)
    });

    let mut features = Vec::new();
    let mut window_start = 0;
    let mut window_index = 0;
    loop {
        let window_end = (window_start + capacity).min(ctx_spans.len());
        let mut input_ids = Vec::with_capacity(max_len);
        let mut type_ids = Vec::with_capacity(max_len);
        let mut offsets: Vec<Option<(usize, usize)>> = Vec::with_capacity(max_len);

        input_ids.push(CLS);
        type_ids.push(0);
        offsets.push(None);
        for s in &q_spans {
            input_ids.push(s.id);
            type_ids.push(0);
            offsets.push(None);
        }
        input_ids.push(SEP);
        type_ids.push(0);
        offsets.push(None);
        let context_base = input_ids.len();
        for s in &ctx_spans[window_start..window_end] {
            input_ids.push(s.id);
            type_ids.push(1);
            offsets.push(Some((s.start, s.end)));
        }
        input_ids.push(SEP);
        type_ids.push(1);
        offsets.push(None);

        let mut attention_mask = alloc::vec![1u8; input_ids.len()];
        while input_ids.len() < max_len {
            input_ids.push(PAD);
            type_ids.push(0);
            offsets.push(None);
            attention_mask.push(0);
        }

        let (start_position, end_position) = match gold {
            Some((Some(ts), Some(te)))
                if ts >= window_start && te < window_end && ts <= te =>
            {
                (
                    Some(context_base + ts - window_start),
                    Some(context_base + te - window_start),
                )
            }
            _ => (None, None),
        };

        features.push(Feature {
            example_id: example.id.clone(),
            window_index,
            input_ids,
            attention_mask,
            type_ids,
            offsets,
            start_position,
            end_position,
        });

        if window_start + capacity >= ctx_spans.len() {
            break;
        }
        window_start += stride;
        window_index += 1;
    }
    Ok(features)
}
