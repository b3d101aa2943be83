use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{TokenBatch, Vocabulary, SEP_TOKEN};
use crate::error::{Error, Result};
use crate::harness::write_atomic;

/// One labeled raw instance; `text_b` is set for sentence-pair tasks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: u64,
    pub label: usize,
    pub text_a: String,
    pub text_b: Option<String>,
}

impl Example {
    /// Single string fed to the tokenizer; pairs are joined by the separator token.
    pub fn text(&self) -> String {
        match &self.text_b {
            Some(b) => format!("{} {SEP_TOKEN} {}", self.text_a, b),
            None => self.text_a.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    /// Class names; an example's label indexes into this list.
    pub label_names: Vec<String>,
    pub examples: Vec<Example>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Rejects fields that would break the tab-separated layout.
pub(crate) fn check_field(field: &str) -> Result<()> {
    if field.contains(['\t', '\n', '\r']) {
        return Err(Error::config(format!("field {field:?} contains a tab or newline")));
    }
    Ok(())
}

impl Dataset {
    pub fn new(name: impl Into<String>, label_names: Vec<String>, examples: Vec<Example>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            label_names,
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_names.len() < 2 {
            return Err(Error::config(format!("dataset {} needs at least two labels", self.name)));
        }
        let names: BTreeSet<&String> = self.label_names.iter().collect();
        if names.len() != self.label_names.len() {
            return Err(Error::config("duplicate label names"));
        }
        let mut ids = BTreeSet::new();
        for e in &self.examples {
            if !ids.insert(e.id) {
                return Err(Error::config(format!("duplicate example id {}", e.id)));
            }
            if e.label >= self.label_names.len() {
                return Err(Error::Label {
                    label: e.label,
                    classes: self.label_names.len(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn is_pair(&self) -> bool {
        self.examples.iter().any(|e| e.text_b.is_some())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == name)
    }

    /// Same labels, a subset of the examples.
    pub fn subset(&self, name: &str, keep: impl Fn(&Example) -> bool) -> Dataset {
        Dataset {
            name: name.into(),
            label_names: self.label_names.clone(),
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    /// Tab-separated text with header `id label text_a [text_b]`.
    pub fn to_tsv(&self) -> Result<String> {
        let pair = self.is_pair();
        let mut s = String::from(if pair { "id\tlabel\ttext_a\ttext_b\n" } else { "id\tlabel\ttext_a\n" });
        for e in &self.examples {
            check_field(&e.text_a)?;
            s.push_str(&format!("{}\t{}\t{}", e.id, self.label_names[e.label], e.text_a));
            if pair {
                let b = e.text_b.as_deref().unwrap_or("");
                check_field(b)?;
                s.push('\t');
                s.push_str(b);
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv()?.as_bytes())
    }

    /// Parses the TSV layout written by [`Dataset::to_tsv`].
    ///
    /// With `label_names` given, any other label is an error; otherwise the
    /// label set is the sorted set of labels found in the file.
    pub fn from_tsv(text: &str, path: &Path, label_names: Option<&[String]>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
        let cols = match header {
            "id\tlabel\ttext_a" => 3,
            "id\tlabel\ttext_a\ttext_b" => 4,
            _ => return Err(parse_err(path, 1, "expected header id, label, text_a [, text_b]")),
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != cols {
                return Err(parse_err(path, n, format!("expected {cols} columns, found {}", fields.len())));
            }
            let id: u64 = fields[0]
                .parse()
                .map_err(|_| parse_err(path, n, format!("id {:?} is not a non-negative integer", fields[0])))?;
            if fields[1].is_empty() {
                return Err(parse_err(path, n, "empty label"));
            }
            rows.push((n, id, fields[1], fields[2], fields.get(3).map(|s| s.to_string())));
        }
        let label_names: Vec<String> = match label_names {
            Some(l) => l.to_vec(),
            None => rows
                .iter()
                .map(|r| r.2.to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let mut examples = Vec::with_capacity(rows.len());
        let mut seen = BTreeSet::new();
        for (n, id, label, a, b) in rows {
            let label = label_names
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| parse_err(path, n, format!("unknown label {label:?}")))?;
            if !seen.insert(id) {
                return Err(parse_err(path, n, format!("duplicate id {id}")));
            }
            examples.push(Example {
                id,
                label,
                text_a: a.to_string(),
                text_b: b,
            });
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Dataset::new(name, label_names, examples)
    }

    pub fn load(path: &Path, label_names: Option<&[String]>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tsv(&text, path, label_names)
    }

    /// Token batch of the given rows.
    pub fn tokens(&self, vocab: &Vocabulary, rows: &[usize], max_len: usize) -> Result<TokenBatch> {
        let ids: Vec<Vec<usize>> = rows
            .iter()
            .map(|&r| {
                let e = &self.examples[r];
                match &e.text_b {
                    Some(b) => vocab.tokenize_pair(&e.text_a, b, max_len).ids,
                    None => vocab.tokenize(&e.text_a, max_len).ids,
                }
            })
            .collect();
        TokenBatch::new(&ids)
    }
}

/// Label-stratified split into `(task, meta)`.
///
/// Each class contributes `round(fraction * n_class)` examples to the meta
/// side, clamped to `[1, n_class - 1]`. Both sides keep the input order.
pub fn split_meta(train: &Dataset, meta_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(meta_fraction > 0.0 && meta_fraction < 1.0) {
        return Err(Error::config("meta_fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meta_ids = BTreeSet::new();
    for k in 0..train.num_classes() {
        let mut members: Vec<u64> = train.examples.iter().filter(|e| e.label == k).map(|e| e.id).collect();
        if members.len() < 2 {
            return Err(Error::config(format!(
                "class {:?} has {} examples; stratified split needs at least 2",
                train.label_names[k],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let take = ((meta_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        meta_ids.extend(members.into_iter().take(take));
    }
    let task = train.subset(&format!("{}_task", train.name), |e| !meta_ids.contains(&e.id));
    let meta = train.subset(&format!("{}_meta", train.name), |e| meta_ids.contains(&e.id));
    Ok((task, meta))
}
