use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const BOS: usize = 4;
pub const EOS: usize = 5;

pub const SPECIALS: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"];

/// Default size cap, specials included.
pub const DEFAULT_VOCAB_SIZE: usize = 30_000;

/// Lowercased word-level tokenization: alphanumeric runs (with inner
/// apostrophes) are words, every other visible character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = c == '\'' && !word.is_empty() && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || c == '_' || inner_apostrophe {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

pub fn is_sentence_end(token: &str) -> bool {
    matches!(token, "." | "?" | "!")
}

/// Token/id mapping with the special tokens at the lowest ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Frequency-ranked vocabulary over `texts`, ties broken alphabetically,
    /// truncated so the total size (specials included) is at most `cap`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, cap: usize) -> Self {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = cap.saturating_sub(SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(room).map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    /// Vocabulary from tokens ordered by id. The first entries must be the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Invalid("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Reads a token-per-line file ordered by id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Tokens ordered by id.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens; unknown ids render as `[UNK]`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Article ids with `[CLS]` before and `[SEP]` after every sentence.
    pub fn encode_article(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let mut open = false;
        for tok in tokenize(text) {
            if !open {
                out.push(CLS);
                open = true;
            }
            let end = is_sentence_end(&tok);
            out.push(self.id(&tok));
            if end {
                out.push(SEP);
                open = false;
            }
        }
        if open {
            out.push(SEP);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["the cat sat . the dog ran !", "a cat ?"], 100)
    }

    #[test]
    fn specials_take_the_lowest_ids() {
        let v = vocab();
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), i);
        }
        // "the" and "cat" are the most frequent words.
        assert_eq!(v.token(6), Some("cat"));
        assert_eq!(v.token(7), Some("the"));
    }

    #[test]
    fn cap_limits_size() {
        let v = Vocabulary::build(["a b c d e f g"], 8);
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn tokenizer_splits_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Don't panic, World!"),
            vec!["don't", "panic", ",", "world", "!"]
        );
    }

    #[test]
    fn article_gets_sentence_markers() {
        let v = vocab();
        let ids = v.encode_article("the cat sat. a dog ran");
        assert_eq!(ids[0], CLS);
        assert_eq!(ids.iter().filter(|&&i| i == CLS).count(), 2);
        assert_eq!(ids.iter().filter(|&&i| i == SEP).count(), 2);
        assert_eq!(*ids.last().unwrap(), SEP);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        assert_eq!(vocab().encode("zebra cat"), vec![UNK, 6]);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = vocab();
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    proptest! {
        #[test]
        fn encode_decode_is_lossless_in_vocab(idx in proptest::collection::vec(6usize..13, 1..20)) {
            let v = vocab();
            let text: Vec<&str> = idx.iter().map(|&i| v.token(i).unwrap()).collect();
            let text = text.join(" ");
            let ids = v.encode(&text);
            prop_assert_eq!(&ids, &idx);
            prop_assert_eq!(v.decode(&ids), text);
        }

        #[test]
        fn arbitrary_text_never_panics(s in "\\PC{0,60}") {
            let v = vocab();
            let ids = v.encode(&s);
            prop_assert!(ids.iter().all(|&i| i < v.len()));
        }
    }
}
