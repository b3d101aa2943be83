/// Vowel-group syllable count with a silent trailing `e`; at least one.
pub fn syllables(word: &str) -> usize {
    let w: Vec<char> = word.to_lowercase().chars().filter(|c| c.is_alphabetic()).collect();
    let vowel = |c: char| "aeiouy".contains(c);
    let mut count = 0;
    let mut prev = false;
    for &c in &w {
        let v = vowel(c);
        if v && !prev {
            count += 1;
        }
        prev = v;
    }
    let n = w.len();
    // "make" has one syllable, "table" keeps its "le"
    if n >= 3 && w[n - 1] == 'e' && !vowel(w[n - 2]) && !(w[n - 2] == 'l' && !vowel(w[n - 3])) && count > 1 {
        count -= 1;
    }
    count.max(1)
}

/// Flesch Reading Ease:
/// `206.835 - 1.015 * words/sentences - 84.6 * syllables/words`.
///
/// Sentences end at `.`, `?` or `!`; both counts are at least one.
pub fn flesch_score(text: &str) -> f64 {
    let words: Vec<&str> = text.split_whitespace().filter(|w| w.chars().any(char::is_alphanumeric)).collect();
    let sentences = text
        .split(['.', '?', '!'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count()
        .max(1);
    let n_words = words.len().max(1);
    let n_syl: usize = if words.is_empty() { 1 } else { words.iter().map(|w| syllables(w)).sum() };
    206.835 - 1.015 * (n_words as f64 / sentences as f64) - 84.6 * (n_syl as f64 / n_words as f64)
}
