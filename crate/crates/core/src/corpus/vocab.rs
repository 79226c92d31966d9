use std::collections::{BTreeSet, HashMap};

/// Reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 9] = [
    "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[CLS]", "[ENC]", "[SEP]", "[MASK-NEG]", "[NONE]",
];

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const CLS: usize = 4;
pub const ENC: usize = 5;
pub const SEP: usize = 6;
pub const MASK_NEG: usize = 7;
/// Knowledge text for an empty node set.
pub const NONE: usize = 8;

/// Word-level vocabulary with dense ids; specials occupy the lowest ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials followed by the lexicon words in sorted order.
    pub fn from_lexicon<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let lexicon: BTreeSet<String> = words
            .into_iter()
            .flat_map(|w| {
                w.as_ref()
                    .split_whitespace()
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
            })
            .filter(|w| !SPECIAL_TOKENS.contains(&w.as_str()))
            .collect();
        let tokens: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(lexicon)
            .collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("[UNK]", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercases, splits on whitespace, maps unknown words to `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|w| {
                let w = w.to_lowercase();
                self.id(&w).unwrap_or(UNK)
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Lowercase, single-spaced form of `text`.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
