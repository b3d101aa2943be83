use rand::{Rng, RngCore};

use super::SynonymLexicon;
use crate::error::{Error, Result};

/// A text-to-text transformation that is a pure function of its input,
/// its parameters and the random stream.
pub trait Augmenter: Send + Sync {
    fn name(&self) -> &str;
    fn augment(&self, text: &str, rng: &mut dyn RngCore) -> Result<String>;
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn replace_synonyms(toks: &mut [String], lexicon: &SynonymLexicon, prob: f64, rng: &mut dyn RngCore) {
    for t in toks.iter_mut() {
        if let Some(syns) = lexicon.synonyms(t) {
            if rng.gen_bool(prob) {
                *t = syns[rng.gen_range(0..syns.len())].clone();
            }
        }
    }
}

/// Independent per-token synonym substitution.
#[derive(Clone, Debug)]
pub struct SynonymAugmenter {
    pub lexicon: SynonymLexicon,
    pub replace_prob: f64,
}

impl Augmenter for SynonymAugmenter {
    fn name(&self) -> &str {
        "synonym"
    }

    fn augment(&self, text: &str, rng: &mut dyn RngCore) -> Result<String> {
        check_prob(self.replace_prob)?;
        let mut toks = tokens(text);
        replace_synonyms(&mut toks, &self.lexicon, self.replace_prob, rng);
        Ok(toks.join(" "))
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("probability {p} outside [0, 1]")))
    }
}

/// Synonym replacement, random insertion, random swap and random deletion,
/// applied in that order.
#[derive(Clone, Debug)]
pub struct EasyDataAugmenter {
    pub lexicon: SynonymLexicon,
    pub replace_prob: f64,
    /// Per original token, chance of inserting a synonym of a random word.
    pub insert_prob: f64,
    /// Per trial, chance of swapping two positions; there are `ceil(n/2)` trials.
    pub swap_prob: f64,
    pub delete_prob: f64,
}

impl Augmenter for EasyDataAugmenter {
    fn name(&self) -> &str {
        "easydata"
    }

    fn augment(&self, text: &str, rng: &mut dyn RngCore) -> Result<String> {
        for p in [self.replace_prob, self.insert_prob, self.swap_prob, self.delete_prob] {
            check_prob(p)?;
        }
        let mut toks = tokens(text);
        if toks.is_empty() {
            return Err(Error::Empty("text to augment"));
        }
        replace_synonyms(&mut toks, &self.lexicon, self.replace_prob, rng);

        let n = toks.len();
        for _ in 0..n {
            if !rng.gen_bool(self.insert_prob) {
                continue;
            }
            let with_syn: Vec<&[String]> = toks.iter().filter_map(|t| self.lexicon.synonyms(t)).collect();
            if with_syn.is_empty() {
                break;
            }
            let syns = with_syn[rng.gen_range(0..with_syn.len())];
            let word = syns[rng.gen_range(0..syns.len())].clone();
            let at = rng.gen_range(0..=toks.len());
            toks.insert(at, word);
        }

        let n = toks.len();
        if n >= 2 {
            for _ in 0..n.div_ceil(2) {
                if rng.gen_bool(self.swap_prob) {
                    let i = rng.gen_range(0..n);
                    let j = (i + rng.gen_range(1..n)) % n;
                    toks.swap(i, j);
                }
            }
        }

        let mut kept = Vec::with_capacity(toks.len());
        let mut remaining = toks.len();
        for t in toks {
            if remaining > 1 && rng.gen_bool(self.delete_prob) {
                remaining -= 1;
                continue;
            }
            kept.push(t);
        }
        // a deletion can only be refused on the final token, so `kept` is never empty
        Ok(kept.join(" "))
    }
}

/// Character-level noise: per selected token, one insert, adjacent swap,
/// delete or replace at a random position.
#[derive(Clone, Debug)]
pub struct CharswapAugmenter {
    pub token_prob: f64,
    /// Relative weights of insert, swap, delete, replace.
    pub op_weights: [f64; 4],
}

impl Default for CharswapAugmenter {
    fn default() -> Self {
        Self {
            token_prob: 0.1,
            op_weights: [1.0; 4],
        }
    }
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn random_letter(rng: &mut dyn RngCore, not: Option<char>) -> char {
    loop {
        let c = LETTERS[rng.gen_range(0..LETTERS.len())] as char;
        if Some(c) != not {
            return c;
        }
    }
}

impl Augmenter for CharswapAugmenter {
    fn name(&self) -> &str {
        "charswap"
    }

    fn augment(&self, text: &str, rng: &mut dyn RngCore) -> Result<String> {
        check_prob(self.token_prob)?;
        if self.op_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::config("charswap operation weights must be non-negative"));
        }
        let mut out = Vec::new();
        for tok in text.split_whitespace() {
            let mut chars: Vec<char> = tok.chars().collect();
            if rng.gen_bool(self.token_prob) {
                let mut w = self.op_weights;
                if chars.len() < 2 {
                    // swap and delete need two characters
                    w[1] = 0.0;
                    w[2] = 0.0;
                }
                let total: f64 = w.iter().sum();
                if total > 0.0 {
                    let mut r = rng.gen_range(0.0..total);
                    let mut op = 3;
                    for (k, &wk) in w.iter().enumerate() {
                        if wk > 0.0 && r < wk {
                            op = k;
                            break;
                        }
                        r -= wk;
                    }
                    let n = chars.len();
                    match op {
                        0 => {
                            let at = rng.gen_range(0..=n);
                            let c = random_letter(rng, None);
                            chars.insert(at, c);
                        }
                        1 => {
                            let i = rng.gen_range(0..n - 1);
                            chars.swap(i, i + 1);
                        }
                        2 => {
                            chars.remove(rng.gen_range(0..n));
                        }
                        _ => {
                            let i = rng.gen_range(0..n);
                            chars[i] = random_letter(rng, Some(chars[i]));
                        }
                    }
                }
            }
            out.push(chars.into_iter().collect::<String>());
        }
        Ok(out.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lex() -> SynonymLexicon {
        let mut l = SynonymLexicon::new();
        l.insert("good", vec!["fine".into()]).unwrap();
        l.insert("film", vec!["movie".into(), "picture".into()]).unwrap();
        l
    }

    fn eda(p: [f64; 4]) -> EasyDataAugmenter {
        EasyDataAugmenter {
            lexicon: lex(),
            replace_prob: p[0],
            insert_prob: p[1],
            swap_prob: p[2],
            delete_prob: p[3],
        }
    }

    // independent dynamic-programming edit distance
    fn levenshtein(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn synonym_identity_and_forced_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = SynonymAugmenter { lexicon: lex(), replace_prob: 0.0 };
        assert_eq!(a.augment("a good film", &mut rng).unwrap(), "a good film");
        let a = SynonymAugmenter { lexicon: lex(), replace_prob: 1.0 };
        assert_eq!(a.augment("good", &mut rng).unwrap(), "fine");
    }

    #[test]
    fn synonym_preserves_token_count() {
        let a = SynonymAugmenter { lexicon: lex(), replace_prob: 0.5 };
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = a.augment("good film is a good film", &mut rng).unwrap();
            assert_eq!(out.split_whitespace().count(), 6);
        }
    }

    #[test]
    fn easydata_identity_swap_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(eda([0.0; 4]).augment("a good film", &mut rng).unwrap(), "a good film");
        assert_eq!(eda([0.0, 0.0, 1.0, 0.0]).augment("left right", &mut rng).unwrap(), "right left");
        assert!(eda([0.0; 4]).augment("  ", &mut rng).is_err());
    }

    #[test]
    fn easydata_length_bounds() {
        let a = eda([0.3, 0.5, 0.5, 0.6]);
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1 + (seed as usize % 7);
            let text = vec!["good"; n].join(" ");
            let m = a.augment(&text, &mut rng).unwrap().split_whitespace().count();
            assert!((1..=2 * n).contains(&m), "{n} -> {m}");
        }
    }

    #[test]
    fn deletion_keeps_the_last_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = eda([0.0, 0.0, 0.0, 1.0]).augment("a b c", &mut rng).unwrap();
        assert_eq!(out, "c");
    }

    #[test]
    fn charswap_identity_and_forced_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = CharswapAugmenter { token_prob: 0.0, ..Default::default() };
        assert_eq!(a.augment("abc de", &mut rng).unwrap(), "abc de");
        let a = CharswapAugmenter { token_prob: 1.0, op_weights: [0.0, 1.0, 0.0, 0.0] };
        assert_eq!(a.augment("ab", &mut rng).unwrap(), "ba");
        assert_eq!(a.augment("x", &mut rng).unwrap(), "x");
    }

    #[test]
    fn charswap_edits_stay_within_two() {
        let a = CharswapAugmenter { token_prob: 0.7, ..Default::default() };
        let text = "noise injection at the character level x";
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = a.augment(text, &mut rng).unwrap();
            for (o, n) in text.split_whitespace().zip(out.split_whitespace()) {
                assert!(levenshtein(o, n) <= 2, "{o} -> {n}");
            }
        }
    }
}
