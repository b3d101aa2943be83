use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::write_atomic;

/// Word to synonyms map; keys are stored lowercased.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, synonyms: Vec<String>) -> Result<()> {
        if word.is_empty() || word.contains(char::is_whitespace) {
            return Err(Error::config(format!("lexicon word {word:?} must be a single token")));
        }
        if synonyms.is_empty() || synonyms.iter().any(|s| s.is_empty() || s.contains(char::is_whitespace) || s.contains(',')) {
            return Err(Error::config(format!("lexicon entry {word:?} needs single-token synonyms")));
        }
        self.entries.insert(word.to_lowercase(), synonyms);
        Ok(())
    }

    /// Case-insensitive lookup.
    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `word<TAB>syn1,syn2` line per entry, sorted by word.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(w, s)| format!("{w}\t{}\n", s.join(","))).collect()
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (word, syns) = line.split_once('\t').ok_or_else(|| err("expected word<TAB>synonyms".into()))?;
            let syns: Vec<String> = syns.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            lex.insert(word.trim(), syns).map_err(|e| err(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}
