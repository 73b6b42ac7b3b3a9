//! Canonical tokenizer: lowercase, split on any non-alphanumeric run.
//!
//! Every component that needs a token or word count goes through this module
//! so there is exactly one length definition in the project.

/// Iterate over lowercased tokens of `text`.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Number of canonical tokens in `text`.
pub fn word_count(text: &str) -> usize {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        let t: Vec<String> = tokens("Good, GREAT -- day3!").collect();
        assert_eq!(t, vec!["good", "great", "day3"]);
    }

    #[test]
    fn empty_and_symbol_only_texts_have_no_tokens() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("  ... !! "), 0);
    }

    proptest! {
        #[test]
        fn count_matches_token_iterator(s in ".*") {
            prop_assert_eq!(word_count(&s), tokens(&s).count());
        }

        #[test]
        fn case_insensitive(s in "[a-zA-Z ]{0,40}") {
            let upper: Vec<String> = tokens(&s.to_uppercase()).collect();
            let lower: Vec<String> = tokens(&s.to_lowercase()).collect();
            prop_assert_eq!(upper, lower);
        }
    }
}
