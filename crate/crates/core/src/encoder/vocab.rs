use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Lowercased whitespace tokens.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Token ids padded or truncated to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    /// Input had no tokens after normalization; `ids` is all padding.
    pub empty: bool,
}

/// Dense token/id mapping with `[PAD]`, `[UNK]` and `[SEP]` at ids 0, 1, 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_frequency: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<&str>())
    }
}

impl Vocabulary {
    /// Specials followed by `tokens` in order; repeated tokens are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            min_frequency: 1,
        };
        for t in [PAD_TOKEN, UNK_TOKEN, SEP_TOKEN] {
            v.insert(t);
        }
        for t in tokens {
            v.insert(&t.as_ref().to_lowercase());
        }
        v
    }

    /// Counts normalized tokens over `texts` and keeps those seen at least
    /// `min_frequency` times, most frequent first, ties alphabetical.
    pub fn build<'a, I>(texts: I, min_frequency: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for tok in normalize(text) {
                if tok != SEP_TOKEN.to_lowercase() {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_frequency).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut v = Self::from_tokens(ranked.into_iter().map(|(t, _)| t));
        v.min_frequency = min_frequency;
        v
    }

    fn insert(&mut self, tok: &str) {
        if !self.token_to_id.contains_key(tok) {
            self.token_to_id.insert(tok.to_string(), self.id_to_token.len());
            self.id_to_token.push(tok.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> usize {
        if let Some(&i) = self.token_to_id.get(token) {
            return i;
        }
        let lower = token.to_lowercase();
        if lower == SEP_TOKEN.to_lowercase() {
            return SEP;
        }
        self.token_to_id.get(&lower).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str, max_len: usize) -> Tokenized {
        let mut ids: Vec<usize> = normalize(text).iter().map(|t| self.id(t)).collect();
        let empty = ids.is_empty();
        ids.truncate(max_len);
        ids.resize(max_len, PAD);
        Tokenized { ids, empty }
    }

    /// Sentence pair joined as `text_a [SEP] text_b`.
    pub fn tokenize_pair(&self, text_a: &str, text_b: &str, max_len: usize) -> Tokenized {
        self.tokenize(&format!("{text_a} {SEP_TOKEN} {text_b}"), max_len)
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        for (i, want) in [PAD_TOKEN, UNK_TOKEN, SEP_TOKEN].iter().enumerate() {
            if lines.get(i) != Some(want) {
                return Err(err(i + 1, format!("expected {want}")));
            }
        }
        let mut v = Self::from_tokens(std::iter::empty::<&str>());
        for (i, tok) in lines.iter().enumerate().skip(3) {
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(err(i + 1, "empty or whitespace-bearing token".into()));
            }
            if v.token_to_id.contains_key(*tok) {
                return Err(err(i + 1, format!("duplicate token {tok:?}")));
            }
            v.insert(tok);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::harness::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_lookup_pads_to_max_len() {
        let v = Vocabulary::from_tokens(["the", "cat"]);
        assert_eq!(v.id("the"), 3);
        assert_eq!(v.id("cat"), 4);
        let t = v.tokenize("The cat", 4);
        assert_eq!(t.ids, vec![3, 4, PAD, PAD]);
        assert!(!t.empty);
    }

    #[test]
    fn unknown_tokens_fall_back_to_unk() {
        let v = Vocabulary::from_tokens(["the", "cat"]);
        assert_eq!(v.tokenize("zzz unseen", 4).ids, vec![UNK, UNK, PAD, PAD]);
    }

    #[test]
    fn empty_text_is_all_padding_and_flagged() {
        let v = Vocabulary::default();
        let t = v.tokenize("   ", 3);
        assert_eq!(t.ids, vec![PAD; 3]);
        assert!(t.empty);
    }

    #[test]
    fn pairs_are_joined_with_sep_and_truncated() {
        let v = Vocabulary::from_tokens(["a", "b", "c"]);
        assert_eq!(v.tokenize_pair("a b", "c", 4).ids, vec![3, 4, SEP, 5]);
        assert_eq!(v.tokenize_pair("a b", "c", 2).ids, vec![3, 4]);
    }

    #[test]
    fn file_format_requires_specials_first() {
        let p = Path::new("vocab.txt");
        let v = Vocabulary::from_tokens(["x", "y"]);
        assert_eq!(Vocabulary::from_text(&v.to_text(), p).unwrap(), v);
        let err = Vocabulary::from_text("[UNK]\n[PAD]\n[SEP]\n", p).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    proptest! {
        #[test]
        fn known_tokens_round_trip(words in proptest::collection::btree_set("[a-z]{1,8}", 1..40)) {
            let v = Vocabulary::from_tokens(words.iter());
            prop_assert_eq!(v.len(), words.len() + 3);
            for w in &words {
                let id = v.id(w);
                prop_assert!(id >= 3);
                prop_assert_eq!(v.token(id), Some(w.as_str()));
            }
            for id in 0..v.len() {
                prop_assert_eq!(v.id(v.token(id).unwrap()), id);
            }
        }
    }
}
