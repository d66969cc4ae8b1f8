use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const UNK: usize = 4;
pub const NUM_SPECIAL: usize = 5;

const SPECIAL_NAMES: [&str; NUM_SPECIAL] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// Surface form emitted for `UNK` by [`Vocabulary::detokenize`]. It survives
/// re-tokenization as a single word and is never admitted into a vocabulary,
/// so it maps straight back to `UNK`.
pub const UNK_SURFACE: &str = "##unk##";

/// Word-level token ↔ id bijection with five fixed special ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Ids of one tokenized text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub surface: Option<String>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids, surface: None }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains_unk(&self) -> bool {
        self.ids.contains(&UNK)
    }
}

fn is_split_punct(c: char) -> bool {
    // '#' stays inside words so markers like "##1" remain one token.
    c.is_ascii_punctuation() && c != '#'
}

/// Lowercases and splits on whitespace, emitting each punctuation mark as its
/// own word.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if is_split_punct(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.extend(c.to_lowercase());
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

impl Vocabulary {
    /// Builds a vocabulary from every word appearing in `texts`, in sorted order
    /// after the specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        Self::from_words(words)
    }

    /// `words` must not contain specials; duplicates and the UNK surface are skipped.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens.iter().cloned().zip(0..).collect();
        for w in words {
            if w == UNK_SURFACE || index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Self { tokens, index }
    }

    /// Rebuilds from the full ordered token list, as stored in a checkpoint.
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_NAMES {
            return Err(Error::Checkpoint("vocabulary does not start with the special tokens".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().zip(0..).collect();
        if index.len() != tokens.len() {
            return Err(Error::Checkpoint("vocabulary contains duplicate tokens".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied().filter(|&i| i >= NUM_SPECIAL)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.id(word).is_some()
    }

    /// Total: out-of-vocabulary words become `UNK`; specials are never produced
    /// except `UNK`.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let ids = split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect();
        TokenSequence {
            ids,
            surface: Some(text.to_string()),
        }
    }

    /// Space-joined surface tokens. `PAD`/`BOS`/`EOS`/`SEP` are dropped and
    /// `UNK` renders as [`UNK_SURFACE`].
    pub fn detokenize(&self, seq: &TokenSequence) -> Result<String> {
        self.detokenize_ids(&seq.ids)
    }

    pub fn detokenize_ids(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                PAD | BOS | EOS | SEP => {}
                UNK => words.push(UNK_SURFACE),
                _ => words.push(self.token(id).ok_or_else(|| {
                    Error::contract(format!("token id {id} out of range for vocabulary of {}", self.len()))
                })?),
            }
        }
        Ok(words.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["no pneumothorax . mild pulmonary edema", "pleural effusion"])
    }

    #[test]
    fn specials_occupy_fixed_ids() {
        let v = vocab();
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            assert_eq!(v.token(i), Some(*name));
        }
        // Specials are not reachable from text.
        assert_eq!(v.id("<sep>"), None);
    }

    #[test]
    fn tokenize_examples() {
        let v = vocab();
        let seq = v.tokenize("No pneumothorax.");
        assert_eq!(seq.ids, vec![v.id("no").unwrap(), v.id("pneumothorax").unwrap(), v.id(".").unwrap()]);
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("##1").ids, vec![UNK]);
        assert_eq!(split_words("patient's  ##2"), vec!["patient", "'", "s", "##2"]);
    }

    #[test]
    fn detokenize_examples() {
        let v = vocab();
        let seq = v.tokenize("mild pulmonary edema");
        assert_eq!(v.detokenize(&seq).unwrap(), "mild pulmonary edema");
        assert_eq!(v.detokenize(&TokenSequence::default()).unwrap(), "");
        let mid = TokenSequence::new(vec![v.id("mild").unwrap(), EOS, v.id("edema").unwrap()]);
        assert_eq!(v.detokenize(&mid).unwrap(), "mild edema");
        assert!(v.detokenize(&TokenSequence::new(vec![v.len()])).is_err());
    }

    #[test]
    fn unk_surface_round_trips() {
        let v = vocab();
        let seq = v.tokenize("mild ##1 edema");
        let text = v.detokenize(&seq).unwrap();
        assert_eq!(text, "mild ##unk## edema");
        assert_eq!(v.tokenize(&text).ids, seq.ids);
    }

    #[test]
    fn from_ordered_round_trip() {
        let v = vocab();
        let w = Vocabulary::from_ordered(v.tokens().to_vec()).unwrap();
        assert_eq!(v, w);
        assert!(Vocabulary::from_ordered(vec!["a".into()]).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_detokenize_is_idempotent(text in "[a-zA-Z .,'#0-9<>-]{0,60}") {
            let v = Vocabulary::build(["alpha beta . , gamma 0 ##1 - <"]);
            let once = v.tokenize(&text);
            let back = v.detokenize(&once).unwrap();
            prop_assert_eq!(v.tokenize(&back).ids, once.ids);
        }
    }
}
