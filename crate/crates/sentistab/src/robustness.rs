//! Deterministic attack transforms: sentence-level paraphrase mixing and
//! seeded lexical perturbation.
//!
//! Both transforms pick the positions they touch by hash ranking instead of
//! a stateful PRNG: position `i` gets rank `u64` = first 8 bytes (big endian)
//! of `SHA-256("{seed}:{i}")` (sentences) or `SHA-256("{seed}:w:{i}")`
//! (words), and the `k` lowest-ranked positions are selected. This is
//! bit-stable across platforms and prefix-stable in `k`, so the damage at a
//! lower ratio is always a subset of the damage at a higher one.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("original text has no sentences")]
    EmptyOriginal,
    #[error("paraphrased text has no sentences but {0} replacements are required")]
    EmptyParaphrase(usize),
    #[error("ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
}

/// Serialized attack description used in experiment configs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(alias = "rate")]
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    ParaphraseMix,
    LexicalPerturb,
}

/// A text split into sentences plus the whitespace separators between them,
/// so that `join` reproduces the input byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSplit {
    pub sentences: Vec<String>,
    /// `separators[i]` is the whitespace run following `sentences[i]`
    /// (possibly empty, always same length as `sentences`).
    pub separators: Vec<String>,
}

impl SentenceSplit {
    /// Split on `.`, `!`, or `?` followed by whitespace or end of text; the
    /// delimiter stays with its sentence.
    pub fn of(text: &str) -> Self {
        let mut sentences = Vec::new();
        let mut separators = Vec::new();
        let bytes = text.as_bytes();
        let mut start = 0;
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            let at_boundary = matches!(b, b'.' | b'!' | b'?')
                && (i + 1 == bytes.len() || bytes[i + 1].is_ascii_whitespace());
            if at_boundary {
                sentences.push(text[start..=i].to_string());
                let mut j = i + 1;
                while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                    j += 1;
                }
                separators.push(text[i + 1..j].to_string());
                start = j;
                i = j;
            } else {
                i += 1;
            }
        }
        if start < bytes.len() {
            sentences.push(text[start..].to_string());
            separators.push(String::new());
        }
        Self {
            sentences,
            separators,
        }
    }

    /// Reassemble the original text (exact round trip of [`Self::of`]).
    pub fn join(&self) -> String {
        let mut out = String::new();
        for (s, sep) in self.sentences.iter().zip(&self.separators) {
            out.push_str(s);
            out.push_str(sep);
        }
        out
    }
}

/// Sentence list of `text` (see [`SentenceSplit::of`] for the exact rule).
pub fn split_sentences(text: &str) -> Vec<String> {
    SentenceSplit::of(text).sentences
}

fn hash_rank(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

fn select_lowest(n: usize, k: usize, rank: impl Fn(usize) -> u64) -> Vec<usize> {
    let mut ranked: Vec<(u64, usize)> = (0..n).map(|i| (rank(i), i)).collect();
    ranked.sort_unstable();
    let mut chosen: Vec<usize> = ranked.into_iter().take(k).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

/// The `k` sentence slots (of `n`) an attack at this seed replaces,
/// ascending.
pub fn sentence_selection(seed: u64, n: usize, k: usize) -> Vec<usize> {
    select_lowest(n, k, |i| hash_rank(&format!("{seed}:{i}")))
}

/// The `k` word positions (of `n`) a perturbation at this seed edits,
/// ascending, each with its rank (the rank mod 3 picks the edit).
pub fn word_selection(seed: u64, n: usize, k: usize) -> Vec<(usize, u64)> {
    select_lowest(n, k, |i| hash_rank(&format!("{seed}:w:{i}")))
        .into_iter()
        .map(|i| (i, hash_rank(&format!("{seed}:w:{i}"))))
        .collect()
}

/// Replace `round(ratio * n)` sentence slots of `original` with the
/// same-index sentences of `paraphrased` (slots beyond the paraphrase's
/// length fall back to its last sentence). Separators come from the
/// original, so ratio 0 is the identity byte for byte.
pub fn paraphrase_mix(
    original: &str,
    paraphrased: &str,
    ratio: f64,
    seed: u64,
) -> Result<String, AttackError> {
    if !(0.0..=1.0).contains(&ratio) || !ratio.is_finite() {
        return Err(AttackError::InvalidRatio(ratio));
    }
    let split = SentenceSplit::of(original);
    let n = split.sentences.len();
    if n == 0 {
        return Err(AttackError::EmptyOriginal);
    }
    let k = (ratio * n as f64).round() as usize;
    if k == 0 {
        return Ok(original.to_string());
    }
    let replacements = split_sentences(paraphrased);
    if replacements.is_empty() {
        return Err(AttackError::EmptyParaphrase(k));
    }
    let mut sentences = split.sentences.clone();
    for i in sentence_selection(seed, n, k) {
        sentences[i] = replacements[i.min(replacements.len() - 1)].clone();
    }
    Ok(SentenceSplit {
        sentences,
        separators: split.separators,
    }
    .join())
}

/// Apply one seeded edit to `round(rate * n_words)` word positions: rank mod
/// 3 selects a midpoint character swap (0), word deletion (1), or word
/// duplication (2).
///
/// `rate` must be in `[0, 1]` (checked).
pub fn lexical_perturb(text: &str, rate: f64, seed: u64) -> String {
    assert!(
        (0.0..=1.0).contains(&rate) && rate.is_finite(),
        "rate {rate} outside [0, 1]"
    );
    let (leading, words, seps) = split_words(text);
    let n = words.len();
    let k = (rate * n as f64).round() as usize;
    if n == 0 || k == 0 {
        return text.to_string();
    }
    let edits: std::collections::HashMap<usize, u64> =
        word_selection(seed, n, k).into_iter().collect();

    let mut out = String::with_capacity(text.len() + 16);
    out.push_str(leading);
    for (i, (word, sep)) in words.iter().zip(&seps).enumerate() {
        match edits.get(&i).map(|r| r % 3) {
            Some(0) => {
                out.push_str(&midpoint_swap(word));
                out.push_str(sep);
            }
            Some(1) => {} // word and its separator are dropped
            Some(2) => {
                out.push_str(word);
                out.push(' ');
                out.push_str(word);
                out.push_str(sep);
            }
            _ => {
                out.push_str(word);
                out.push_str(sep);
            }
        }
    }
    out
}

/// Swap the two characters adjacent to the midpoint: positions
/// `len/2 - 1` and `len/2` (character counts; words shorter than two
/// characters come back unchanged).
fn midpoint_swap(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 2 {
        return word.to_string();
    }
    let m = chars.len() / 2;
    let mut swapped = chars.clone();
    swapped.swap(m - 1, m);
    swapped.into_iter().collect()
}

/// Split into leading whitespace, words, and the whitespace run following
/// each word (`words.len() == seps.len()`; concatenating
/// `leading + word_i + sep_i` reproduces the text).
fn split_words(text: &str) -> (&str, Vec<&str>, Vec<&str>) {
    let body_start = text
        .find(|c: char| !c.is_whitespace())
        .unwrap_or(text.len());
    let leading = &text[..body_start];
    let mut words = Vec::new();
    let mut seps = Vec::new();
    let body = &text[body_start..];
    let mut rest = body;
    while !rest.is_empty() {
        let word_end = rest
            .find(|c: char| c.is_whitespace())
            .unwrap_or(rest.len());
        let (word, tail) = rest.split_at(word_end);
        let sep_end = tail
            .find(|c: char| !c.is_whitespace())
            .unwrap_or(tail.len());
        let (sep, tail) = tail.split_at(sep_end);
        words.push(word);
        seps.push(sep);
        rest = tail;
    }
    (leading, words, seps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::word_count;
    use proptest::prelude::*;

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(split_sentences("A. B! C?"), ["A.", "B!", "C?"]);
        assert_eq!(split_sentences("no terminal punctuation"), ["no terminal punctuation"]);
        assert_eq!(split_sentences(""), Vec::<String>::new());
        // a period inside a number is not a boundary
        assert_eq!(split_sentences("pi is 3.14 yes. next"), ["pi is 3.14 yes.", "next"]);
        // punctuation runs split after the last char of the run
        assert_eq!(split_sentences("Wow!! Next."), ["Wow!!", "Next."]);
    }

    #[test]
    fn join_reproduces_awkward_spacing() {
        for text in [
            "A.  B!\nC? trailing",
            "  leading space. and. more.  ",
            "one",
            "",
            "ends with period.",
        ] {
            assert_eq!(SentenceSplit::of(text).join(), text);
        }
    }

    #[test]
    fn selection_is_pinned_against_external_hash_oracle() {
        // ranks computed with an external sha256 script over keys "42:0".."42:9"
        assert_eq!(sentence_selection(42, 10, 3), [0, 1, 6]);
        assert_eq!(sentence_selection(42, 10, 5), [0, 1, 4, 6, 7]);
        assert_eq!(word_selection(42, 1, 1)[0], (0, 6294083577751373107));
    }

    #[test]
    fn ratio_zero_and_one_are_identity_and_full_replacement() {
        let original = "First one. Second two! Third three?";
        let para = "Alpha. Beta. Gamma.";
        assert_eq!(paraphrase_mix(original, para, 0.0, 1).unwrap(), original);

        let full = paraphrase_mix(original, para, 1.0, 1).unwrap();
        assert_eq!(full, "Alpha. Beta. Gamma.");
    }

    #[test]
    fn short_paraphrase_falls_back_to_its_last_sentence() {
        let original = "One. Two. Three.";
        let para = "Only.";
        let full = paraphrase_mix(original, para, 1.0, 1).unwrap();
        assert_eq!(full, "Only. Only. Only.");
    }

    #[test]
    fn paraphrase_errors() {
        assert_eq!(
            paraphrase_mix("", "x.", 0.5, 1),
            Err(AttackError::EmptyOriginal)
        );
        assert_eq!(
            paraphrase_mix("a. b.", "", 1.0, 1),
            Err(AttackError::EmptyParaphrase(2))
        );
        assert!(matches!(
            paraphrase_mix("a.", "b.", 1.5, 1),
            Err(AttackError::InvalidRatio(_))
        ));
        // ratio 0 never needs the paraphrase
        assert_eq!(paraphrase_mix("a. b.", "", 0.0, 1).unwrap(), "a. b.");
    }

    #[test]
    fn perturb_rate_zero_is_identity() {
        let text = "Nothing  changes here.";
        assert_eq!(lexical_perturb(text, 0.0, 9), text);
        assert_eq!(lexical_perturb("", 1.0, 9), "");
    }

    #[test]
    fn perturb_fixtures_pinned_against_external_oracle() {
        // rank("42:w:0") mod 3 == 1 -> single word deleted
        assert_eq!(lexical_perturb("hello", 1.0, 42), "");
        // seed 9 selects positions 3,4,5 with edits delete, dup, dup
        assert_eq!(
            lexical_perturb("the quick brown fox jumps high", 0.5, 9),
            "the quick brown jumps jumps high high"
        );
    }

    #[test]
    fn midpoint_swap_rule() {
        assert_eq!(midpoint_swap("hello"), "hlelo");
        assert_eq!(midpoint_swap("ab"), "ba");
        assert_eq!(midpoint_swap("a"), "a");
        assert_eq!(midpoint_swap("abcd"), "acbd");
    }

    #[test]
    fn word_count_follows_the_edit_arithmetic() {
        let text = "alpha beta gamma delta epsilon zeta eta theta";
        let n = word_count(text);
        for seed in 0..20u64 {
            for rate in [0.25, 0.5, 1.0] {
                let k = (rate * n as f64).round() as usize;
                let mut expected = n as i64;
                for (_, rank) in word_selection(seed, n, k) {
                    match rank % 3 {
                        1 => expected -= 1,
                        2 => expected += 1,
                        _ => {}
                    }
                }
                let out = lexical_perturb(text, rate, seed);
                assert_eq!(word_count(&out) as i64, expected, "seed {seed} rate {rate}");
            }
        }
    }

    proptest! {
        #[test]
        fn join_of_split_is_identity(text in ".{0,200}") {
            prop_assert_eq!(SentenceSplit::of(&text).join(), text);
        }

        #[test]
        fn replaced_slots_nest_as_ratio_grows(
            seed in 0u64..500,
            n in 1usize..60,
            r1 in 0.0f64..1.0,
            r2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let k1 = (lo * n as f64).round() as usize;
            let k2 = (hi * n as f64).round() as usize;
            let s1 = sentence_selection(seed, n, k1);
            let s2 = sentence_selection(seed, n, k2);
            prop_assert!(s1.iter().all(|i| s2.contains(i)));
        }

        #[test]
        fn perturbation_is_deterministic_and_bounded(
            text in "[a-z]{1,10}( [a-z]{1,10}){0,15}",
            rate in 0.0f64..1.0,
            seed in 0u64..100,
        ) {
            let a = lexical_perturb(&text, rate, seed);
            let b = lexical_perturb(&text, rate, seed);
            prop_assert_eq!(&a, &b);
            let n = word_count(&text) as i64;
            let k = (rate * n as f64).round() as i64;
            prop_assert!((word_count(&a) as i64 - n).abs() <= k);
        }
    }
}
