//! Deterministic subword tokenizer: a frequency-ranked vocabulary of
//! word-initial and continuation pieces, segmented by greedy longest match,
//! with every token carrying its half-open character range in the original
//! text.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Longest candidate piece considered during training and matching.
const MAX_PIECE_CHARS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenizerError {
    VocabTooSmall { requested: usize, needed: usize },
    UnknownPieceId { id: usize },
}

impl fmt::Display for TokenizerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerError::VocabTooSmall { requested, needed } => write!(
                f,
                "vocab_size {requested} too small: {needed} entries needed for specials plus base characters"
            ),
            TokenizerError::UnknownPieceId { id } => write!(f, "piece id {id} not in vocabulary"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Casing {
    /// Lowercase before vocabulary lookup (offsets still reference the
    /// original text).
    Lower,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Piece {
    text: String,
    continuation: bool,
}

/// One emitted token: vocabulary id plus the half-open character range it
/// covers in the original input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub id: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerData", into = "TokenizerData")]
pub struct Tokenizer {
    pieces: Vec<Piece>,
    casing: Casing,
    lookup: BTreeMap<(bool, String), usize>,
    max_piece_chars: usize,
}

/// Serialized form: piece list plus casing; the lookup table is rebuilt.
#[derive(Serialize, Deserialize)]
struct TokenizerData {
    casing: Casing,
    pieces: Vec<Piece>,
}

impl From<TokenizerData> for Tokenizer {
    fn from(d: TokenizerData) -> Self {
        Tokenizer::from_pieces(d.pieces, d.casing)
    }
}

impl From<Tokenizer> for TokenizerData {
    fn from(t: Tokenizer) -> Self {
        TokenizerData {
            casing: t.casing,
            pieces: t.pieces,
        }
    }
}

/// Build a vocabulary of `vocab_size` pieces from the corpus text.
///
/// Candidate pieces are all substrings of whitespace-separated words (up to
/// 16 chars), counted with word frequency and split into word-initial and
/// continuation kinds. Single characters of the corpus are always included
/// in both kinds, so any in-alphabet text stays representable; remaining
/// slots go to candidates ranked by count, then length, then kind, then
/// text.
pub fn train_tokenizer(
    corpus: &str,
    vocab_size: usize,
    casing: Casing,
) -> Result<Tokenizer, TokenizerError> {
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for word in corpus.split_whitespace() {
        let w = match casing {
            Casing::Lower => word.to_lowercase(),
            Casing::Keep => word.to_string(),
        };
        *word_freq.entry(w).or_insert(0) += 1;
    }

    let mut counts: BTreeMap<(bool, String), u64> = BTreeMap::new();
    let mut base: BTreeSet<char> = BTreeSet::new();
    for (word, freq) in &word_freq {
        let chars: Vec<char> = word.chars().collect();
        base.extend(chars.iter());
        for i in 0..chars.len() {
            let continuation = i > 0;
            let max_j = (i + MAX_PIECE_CHARS).min(chars.len());
            for j in i + 1..=max_j {
                let piece: String = chars[i..j].iter().collect();
                *counts.entry((continuation, piece)).or_insert(0) += freq;
            }
        }
    }

    let needed = SPECIALS.len() + 2 * base.len();
    if vocab_size < needed {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            needed,
        });
    }
    let budget = vocab_size - SPECIALS.len();

    let mut mandatory: BTreeSet<(bool, String)> = BTreeSet::new();
    for ch in &base {
        mandatory.insert((false, ch.to_string()));
        mandatory.insert((true, ch.to_string()));
    }

    // count desc, length desc, initial before continuation, text asc
    let mut ranked: Vec<(&(bool, String), &u64)> = counts.iter().collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(a.1)
            .then_with(|| b.0 .1.chars().count().cmp(&a.0 .1.chars().count()))
            .then_with(|| a.0 .0.cmp(&b.0 .0))
            .then_with(|| a.0 .1.cmp(&b.0 .1))
    });

    let mut chosen: Vec<(bool, String)> = Vec::new();
    let mut chosen_set: BTreeSet<(bool, String)> = BTreeSet::new();
    let mut mandatory_left = mandatory.len();
    for (key, _) in ranked {
        if chosen.len() >= budget {
            break;
        }
        if chosen_set.contains(key) {
            continue;
        }
        let is_mandatory = mandatory.contains(key);
        // keep room for mandatory singles the ranking has not reached yet
        if !is_mandatory && chosen.len() + mandatory_left >= budget {
            continue;
        }
        chosen.push(key.clone());
        chosen_set.insert(key.clone());
        if is_mandatory {
            mandatory_left -= 1;
        }
    }
    for key in mandatory {
        if !chosen_set.contains(&key) {
            chosen.push(key);
        }
    }

    let mut pieces: Vec<Piece> = SPECIALS
        .iter()
        .map(|s| Piece {
            text: s.to_string(),
            continuation: false,
        })
        .collect();
    pieces.extend(chosen.into_iter().map(|(continuation, text)| Piece {
        text,
        continuation,
    }));
    Ok(Tokenizer::from_pieces(pieces, casing))
}

impl Tokenizer {
    fn from_pieces(pieces: Vec<Piece>, casing: Casing) -> Self {
        let mut lookup = BTreeMap::new();
        let mut max_piece_chars = 1;
        for (id, piece) in pieces.iter().enumerate() {
            if id >= SPECIALS.len() {
                max_piece_chars = max_piece_chars.max(piece.text.chars().count());
                lookup.insert((piece.continuation, piece.text.clone()), id);
            }
        }
        Tokenizer {
            pieces,
            casing,
            lookup,
            max_piece_chars,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn casing(&self) -> Casing {
        self.casing
    }

    pub fn piece_text(&self, id: usize) -> Result<&str, TokenizerError> {
        self.pieces
            .get(id)
            .map(|p| p.text.as_str())
            .ok_or(TokenizerError::UnknownPieceId { id })
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Greedy longest-match segmentation. Every non-whitespace character is
    /// covered by exactly one strictly-increasing range; characters with no
    /// matching piece become single-character `[UNK]` tokens.
    pub fn tokenize(&self, text: &str) -> Vec<TokenSpan> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let mut word_end = i;
            while word_end < chars.len() && !chars[word_end].is_whitespace() {
                word_end += 1;
            }
            let mut pos = i;
            let mut continuation = false;
            while pos < word_end {
                let limit = (pos + self.max_piece_chars).min(word_end);
                let mut matched = None;
                for end in (pos + 1..=limit).rev() {
                    let cand: String = match self.casing {
                        Casing::Lower => chars[pos..end].iter().collect::<String>().to_lowercase(),
                        Casing::Keep => chars[pos..end].iter().collect(),
                    };
                    if let Some(&id) = self.lookup.get(&(continuation, cand)) {
                        matched = Some((id, end));
                        break;
                    }
                }
                match matched {
                    Some((id, end)) => {
                        out.push(TokenSpan {
                            id,
                            start: pos,
                            end,
                        });
                        pos = end;
                    }
                    None => {
                        out.push(TokenSpan {
                            id: UNK,
                            start: pos,
                            end: pos + 1,
                        });
                        pos += 1;
                    }
                }
                continuation = true;
            }
            i = word_end;
        }
        out
    }

    /// Inverse of `tokenize` up to the casing rule and whitespace collapsing.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            let Some(piece) = self.pieces.get(id) else {
                continue;
            };
            if self.is_special(id) {
                continue;
            }
            if !piece.continuation && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&piece.text);
        }
        out
    }
}
