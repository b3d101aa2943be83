//! Reproducible desk-scale text classification benchmark.
//!
//! Sentences are filler pseudo-words plus one or two class cue words. The
//! training split mostly uses each cue's base form, while the dev split
//! draws uniformly from the base form and its synonyms, so a model sees
//! most synonyms only through lexicon-driven augmentation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::SynonymLexicon;
use crate::error::{Error, Result};

use super::{Dataset, Example};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub num_classes: usize,
    pub cues_per_class: usize,
    pub synonyms_per_cue: usize,
    pub fillers: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that a two-cue sentence also carries one cue of another class.
    pub distractor_prob: f64,
    /// Chance that a training cue appears as a synonym instead of its base
    /// form; the dev split always draws uniformly over all forms.
    pub train_synonym_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_dev: 500,
            num_classes: 2,
            cues_per_class: 8,
            synonyms_per_cue: 2,
            fillers: 60,
            min_len: 6,
            max_len: 12,
            distractor_prob: 0.2,
            train_synonym_prob: 0.1,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub dev: Dataset,
    pub lexicon: SynonymLexicon,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let syl: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let mut words: Vec<String> = syl.iter().flat_map(|a| syl.iter().map(move |b| format!("{a}{b}"))).collect();
    words.shuffle(rng);
    words.truncate(n);
    words
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic: {m}")));
        if self.num_classes < 2 || self.cues_per_class == 0 || self.fillers == 0 {
            return bad("need two classes, cues and fillers");
        }
        if self.n_train < 2 * self.num_classes || self.n_dev == 0 {
            return bad("too few examples");
        }
        if self.min_len < 4 || self.min_len > self.max_len {
            return bad("sentence lengths must satisfy 4 <= min_len <= max_len");
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return bad("distractor_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.train_synonym_prob) {
            return bad("train_synonym_prob must lie in [0, 1]");
        }
        let needed = self.fillers + self.num_classes * self.cues_per_class * (1 + self.synonyms_per_cue);
        if needed > 70 * 70 {
            return bad("too many distinct words requested");
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let forms = 1 + self.synonyms_per_cue;
        let total = self.fillers + self.num_classes * self.cues_per_class * forms;
        let words = pseudo_words(total, &mut rng);
        let (fillers, cue_words) = words.split_at(self.fillers);
        // cues[k][c] = [base, synonyms...]
        let cues: Vec<Vec<&[String]>> = (0..self.num_classes)
            .map(|k| {
                (0..self.cues_per_class)
                    .map(|c| {
                        let start = (k * self.cues_per_class + c) * forms;
                        &cue_words[start..start + forms]
                    })
                    .collect()
            })
            .collect();

        let mut lexicon = SynonymLexicon::new();
        for class in &cues {
            for forms in class {
                if forms.len() > 1 {
                    lexicon.insert(&forms[0], forms[1..].to_vec())?;
                }
            }
        }
        for (i, f) in fillers.iter().enumerate() {
            let other = &fillers[(i + 1) % fillers.len()];
            if other != f {
                lexicon.insert(f, vec![other.clone()])?;
            }
        }

        let label_names: Vec<String> = (0..self.num_classes).map(|k| format!("class{k}")).collect();
        let sentence = |label: usize, any_form: bool, rng: &mut ChaCha8Rng| -> String {
            let pick = |k: usize, rng: &mut ChaCha8Rng| -> String {
                let forms = cues[k][rng.gen_range(0..self.cues_per_class)];
                let f = if any_form {
                    rng.gen_range(0..forms.len())
                } else if forms.len() > 1 && rng.gen_bool(self.train_synonym_prob) {
                    rng.gen_range(1..forms.len())
                } else {
                    0
                };
                forms[f].clone()
            };
            let len = rng.gen_range(self.min_len..=self.max_len);
            let n_cues = rng.gen_range(1..=2);
            let mut special: Vec<String> = (0..n_cues).map(|_| pick(label, rng)).collect();
            if n_cues == 2 && rng.gen_bool(self.distractor_prob) {
                let other = (label + rng.gen_range(1..self.num_classes)) % self.num_classes;
                special.push(pick(other, rng));
            }
            let mut toks: Vec<String> = (0..len - special.len())
                .map(|_| fillers[rng.gen_range(0..fillers.len())].clone())
                .collect();
            for s in special {
                let at = rng.gen_range(0..=toks.len());
                toks.insert(at, s);
            }
            toks.join(" ")
        };
        let make = |n: usize, offset: u64, any_form: bool, rng: &mut ChaCha8Rng| -> Vec<Example> {
            (0..n)
                .map(|i| {
                    let label = i % self.num_classes;
                    Example {
                        id: offset + i as u64,
                        label,
                        text_a: sentence(label, any_form, rng),
                        text_b: None,
                    }
                })
                .collect()
        };
        let train = make(self.n_train, 0, false, &mut rng);
        let dev = make(self.n_dev, self.n_train as u64, true, &mut rng);
        Ok(SyntheticData {
            train: Dataset::new("synthetic_train", label_names.clone(), train)?,
            dev: Dataset::new("synthetic_dev", label_names, dev)?,
            lexicon,
        })
    }
}
