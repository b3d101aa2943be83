//! Black-box text augmenters, the readability filter, and construction of
//! the augmented training set.

mod flesch;
mod lexicon;
mod ops;

pub use flesch::{flesch_score, syllables};
pub use lexicon::SynonymLexicon;
pub use ops::{Augmenter, CharswapAugmenter, EasyDataAugmenter, SynonymAugmenter};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{TokenBatch, Vocabulary, SEP_TOKEN};
use crate::error::{Error, Result};
use crate::harness::{check_field, write_atomic, Dataset};

/// Suffix appended to the augmenter name of a deliberately mislabeled example.
pub const FLIP_SUFFIX: &str = "+flip";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedExample {
    pub id: u64,
    /// Id of the raw example this was generated from.
    pub origin_id: u64,
    pub label: usize,
    pub augmenter: String,
    /// Pairs are joined with the separator token.
    pub text: String,
    pub seed: u64,
}

impl AugmentedExample {
    pub fn is_flipped(&self) -> bool {
        self.augmenter.ends_with(FLIP_SUFFIX)
    }
}

/// Augmented examples with the label names of their raw dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedSet {
    pub label_names: Vec<String>,
    pub examples: Vec<AugmentedExample>,
}

const AUG_HEADER: &str = "id\torigin_id\tlabel\taugmenter\ttext";

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut s = format!("{AUG_HEADER}\n");
        for e in &self.examples {
            check_field(&e.text)?;
            check_field(&e.augmenter)?;
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id, e.origin_id, self.label_names[e.label], e.augmenter, e.text
            ));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv()?.as_bytes())
    }

    /// Parses the TSV layout; labels must come from `label_names`. The seed
    /// column is not stored, so loaded examples carry `seed`.
    pub fn from_tsv(text: &str, path: &Path, label_names: &[String], seed: u64) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == AUG_HEADER => {}
            _ => return Err(err(1, format!("expected header {AUG_HEADER:?}"))),
        }
        let mut examples = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(err(i + 1, format!("expected 5 columns, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| err(i + 1, format!("{s:?} is not an integer")));
            let label = label_names
                .iter()
                .position(|l| l == f[2])
                .ok_or_else(|| err(i + 1, format!("unknown label {:?}", f[2])))?;
            examples.push(AugmentedExample {
                id: num(f[0])?,
                origin_id: num(f[1])?,
                label,
                augmenter: f[3].to_string(),
                text: f[4].to_string(),
                seed,
            });
        }
        Ok(Self {
            label_names: label_names.to_vec(),
            examples,
        })
    }

    pub fn load(path: &Path, label_names: &[String], seed: u64) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?, path, label_names, seed)
    }

    /// Every origin id must name an example of `raw`.
    pub fn check_origins(&self, raw: &Dataset) -> Result<()> {
        let ids: std::collections::BTreeSet<u64> = raw.examples.iter().map(|e| e.id).collect();
        match self.examples.iter().find(|e| !ids.contains(&e.origin_id)) {
            Some(e) => Err(Error::config(format!("augmented example {} has unknown origin {}", e.id, e.origin_id))),
            None => Ok(()),
        }
    }

    pub fn tokens(&self, vocab: &Vocabulary, rows: &[usize], max_len: usize) -> Result<TokenBatch> {
        let ids: Vec<Vec<usize>> = rows.iter().map(|&r| vocab.tokenize(&self.examples[r].text, max_len).ids).collect();
        TokenBatch::new(&ids)
    }
}

/// Keeps examples whose readability score lies in `[lower, upper]`.
pub fn filter_augmented(examples: &[AugmentedExample], lower: f64, upper: f64) -> Result<Vec<AugmentedExample>> {
    if lower.is_nan() || upper.is_nan() || lower > upper {
        return Err(Error::config(format!("filter limits [{lower}, {upper}] are not an interval")));
    }
    Ok(examples
        .iter()
        .filter(|e| {
            let s = flesch_score(&e.text);
            lower <= s && s <= upper
        })
        .cloned()
        .collect())
}

/// Settings for the bundled augmenters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    /// Names drawn from `synonym`, `easydata`, `charswap`, cycled per example.
    pub augmenters: Vec<String>,
    pub per_example: usize,
    pub synonym_prob: f64,
    pub eda_replace_prob: f64,
    pub eda_insert_prob: f64,
    pub eda_swap_prob: f64,
    pub eda_delete_prob: f64,
    pub charswap_prob: f64,
    /// Fraction of augmented examples given a wrong label on purpose.
    pub flip_rate: f64,
    pub seed: u64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            augmenters: vec!["synonym".into(), "easydata".into(), "charswap".into()],
            per_example: 6,
            synonym_prob: 0.5,
            eda_replace_prob: 0.2,
            eda_insert_prob: 0.1,
            eda_swap_prob: 0.1,
            eda_delete_prob: 0.1,
            charswap_prob: 0.1,
            flip_rate: 0.0,
            seed: 0,
        }
    }
}

impl AugmentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.per_example == 0 {
            return Err(Error::config("per_example must be at least 1"));
        }
        if self.augmenters.is_empty() {
            return Err(Error::config("at least one augmenter required"));
        }
        let probs = [
            self.synonym_prob,
            self.eda_replace_prob,
            self.eda_insert_prob,
            self.eda_swap_prob,
            self.eda_delete_prob,
            self.charswap_prob,
            self.flip_rate,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("augmentation probabilities must lie in [0, 1]"));
        }
        for name in &self.augmenters {
            if !["synonym", "easydata", "charswap"].contains(&name.as_str()) {
                return Err(Error::config(format!("unknown augmenter {name:?}")));
            }
        }
        Ok(())
    }

    pub fn build(&self, lexicon: &SynonymLexicon) -> Result<Vec<Box<dyn Augmenter>>> {
        self.validate()?;
        Ok(self
            .augmenters
            .iter()
            .map(|name| -> Box<dyn Augmenter> {
                match name.as_str() {
                    "synonym" => Box::new(SynonymAugmenter {
                        lexicon: lexicon.clone(),
                        replace_prob: self.synonym_prob,
                    }),
                    "easydata" => Box::new(EasyDataAugmenter {
                        lexicon: lexicon.clone(),
                        replace_prob: self.eda_replace_prob,
                        insert_prob: self.eda_insert_prob,
                        swap_prob: self.eda_swap_prob,
                        delete_prob: self.eda_delete_prob,
                    }),
                    _ => Box::new(CharswapAugmenter {
                        token_prob: self.charswap_prob,
                        ..Default::default()
                    }),
                }
            })
            .collect())
    }
}

fn example_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const REDRAWS: usize = 8;

/// `per_example` augmentations of every raw example, cycling through
/// `augmenters`. An output equal to the raw text is redrawn a few times
/// and kept if the augmenter cannot change it, so the set always holds
/// `per_example` rows per raw example.
///
/// Each raw example has its own random stream derived from `seed` and its
/// id, so the result does not depend on scheduling. Output is ordered by
/// origin (input order), then generation order, and ids are assigned
/// sequentially in that order.
pub fn build_augmented_dataset(
    raw: &Dataset,
    augmenters: &[Box<dyn Augmenter>],
    per_example: usize,
    seed: u64,
) -> Result<AugmentedSet> {
    if per_example == 0 || augmenters.is_empty() {
        return Err(Error::config("need at least one augmenter and per_example >= 1"));
    }
    let per_origin: Vec<Vec<(String, String)>> = raw
        .examples
        .par_iter()
        .map(|e| -> Result<Vec<(String, String)>> {
            let mut rng = example_rng(seed, e.id);
            let original = e.text();
            let mut out = Vec::new();
            for k in 0..per_example {
                let aug = &augmenters[k % augmenters.len()];
                let mut text = String::new();
                for _ in 0..REDRAWS {
                    let a = aug.augment(&e.text_a, &mut rng)?;
                    text = match &e.text_b {
                        Some(b) => format!("{a} {SEP_TOKEN} {}", aug.augment(b, &mut rng)?),
                        None => a,
                    };
                    if text != original {
                        break;
                    }
                }
                out.push((aug.name().to_string(), text));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut examples = Vec::new();
    for (e, augs) in raw.examples.iter().zip(per_origin) {
        for (augmenter, text) in augs {
            examples.push(AugmentedExample {
                id: examples.len() as u64,
                origin_id: e.id,
                label: e.label,
                augmenter,
                text,
                seed,
            });
        }
    }
    Ok(AugmentedSet {
        label_names: raw.label_names.clone(),
        examples,
    })
}

/// Reassigns a `rate` fraction of labels (chosen without replacement) to a
/// uniformly drawn different class and tags them with [`FLIP_SUFFIX`].
pub fn flip_labels(set: &mut AugmentedSet, rate: f64, seed: u64) -> Result<usize> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config("flip rate must lie in [0, 1]"));
    }
    let k = set.label_names.len();
    let n = set.examples.len();
    let count = (rate * n as f64).round() as usize;
    if count == 0 || k < 2 {
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let chosen = rand::seq::index::sample(&mut rng, n, count).into_vec();
    let mut chosen = chosen;
    chosen.sort_unstable();
    for i in chosen {
        let e = &mut set.examples[i];
        let shift = rng.gen_range(1..k);
        e.label = (e.label + shift) % k;
        e.augmenter.push_str(FLIP_SUFFIX);
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Example;

    fn raw(n: usize) -> Dataset {
        let words = ["good", "film", "bad", "plot", "fine", "cast"];
        let examples = (0..n)
            .map(|i| Example {
                id: 10 + i as u64,
                label: i % 2,
                text_a: (0..5).map(|j| words[(i + j) % words.len()]).collect::<Vec<_>>().join(" "),
                text_b: None,
            })
            .collect();
        Dataset::new("r", vec!["neg".into(), "pos".into()], examples).unwrap()
    }

    fn lexicon() -> SynonymLexicon {
        SynonymLexicon::from_text("good\tfine,great\nfilm\tmovie\nbad\tpoor\n", Path::new("l")).unwrap()
    }

    fn settings() -> AugmentSettings {
        AugmentSettings {
            charswap_prob: 0.3,
            ..AugmentSettings::default()
        }
    }

    #[test]
    fn ratio_labels_and_origins() {
        let ds = raw(100);
        let augs = settings().build(&lexicon()).unwrap();
        let set = build_augmented_dataset(&ds, &augs, 6, 1).unwrap();
        assert!(set.len() <= 600 && set.len() > 300, "{}", set.len());
        set.check_origins(&ds).unwrap();
        for e in &set.examples {
            let origin = ds.examples.iter().find(|r| r.id == e.origin_id).unwrap();
            assert_eq!(e.label, origin.label);
            assert_ne!(e.text, origin.text_a);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let ds = raw(40);
        let augs = settings().build(&lexicon()).unwrap();
        let a = build_augmented_dataset(&ds, &augs, 6, 5).unwrap().to_tsv().unwrap();
        let b = build_augmented_dataset(&ds, &augs, 6, 5).unwrap().to_tsv().unwrap();
        assert_eq!(a, b);
        let c = build_augmented_dataset(&ds, &augs, 6, 6).unwrap().to_tsv().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tsv_round_trip() {
        let ds = raw(10);
        let augs = settings().build(&lexicon()).unwrap();
        let mut set = build_augmented_dataset(&ds, &augs, 3, 2).unwrap();
        flip_labels(&mut set, 0.3, 2).unwrap();
        let text = set.to_tsv().unwrap();
        let back = AugmentedSet::from_tsv(&text, Path::new("a.tsv"), &ds.label_names, 2).unwrap();
        assert_eq!(back, set);
    }

    fn with_texts(texts: &[&str]) -> Vec<AugmentedExample> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| AugmentedExample {
                id: i as u64,
                origin_id: 0,
                label: 0,
                augmenter: "x".into(),
                text: t.to_string(),
                seed: 0,
            })
            .collect()
    }

    #[test]
    fn filter_limits() {
        let ex = with_texts(&["Cat.", "The old man sat by the window.", "Unquestionably institutionalized organizations."]);
        assert_eq!(filter_augmented(&ex, f64::NEG_INFINITY, f64::INFINITY).unwrap(), ex);
        assert!(filter_augmented(&ex, 1000.0, 1001.0).unwrap().is_empty());
        let scores: Vec<f64> = ex.iter().map(|e| flesch_score(&e.text)).collect();
        let kept = filter_augmented(&ex, 0.0, 120.0).unwrap();
        let manual: Vec<_> = ex.iter().zip(&scores).filter(|(_, &s)| (0.0..=120.0).contains(&s)).map(|(e, _)| e.clone()).collect();
        assert_eq!(kept, manual);
        assert_eq!(kept.len(), 1);
        assert!(filter_augmented(&ex, 2.0, 1.0).is_err());
    }

    #[test]
    fn flips_change_labels_and_tag_names() {
        let ds = raw(50);
        let augs = settings().build(&lexicon()).unwrap();
        let clean = build_augmented_dataset(&ds, &augs, 6, 0).unwrap();
        let mut set = clean.clone();
        let n = flip_labels(&mut set, 0.3, 9).unwrap();
        assert_eq!(n, (0.3 * set.len() as f64).round() as usize);
        let mut flipped = 0;
        for (a, b) in clean.examples.iter().zip(&set.examples) {
            if b.is_flipped() {
                flipped += 1;
                assert_ne!(a.label, b.label);
            } else {
                assert_eq!(a, b);
            }
        }
        assert_eq!(flipped, n);
    }
}
