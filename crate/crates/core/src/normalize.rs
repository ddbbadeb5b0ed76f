//! String normalization shared by loading, compilation and scoring.
//!
//! Values are stored verbatim. "Exact match" means equality after
//! [`normalize_value`], which only trims surrounding whitespace; case is
//! preserved. Free-form model answers (`yes`, `Unanswerable.`) go through
//! [`normalize_answer`] which additionally lowercases and strips trailing
//! punctuation.

/// Canonical form of a slot value for exact-match comparison.
pub fn normalize_value(text: &str) -> &str {
    text.trim()
}

/// Canonical form of a short generated answer such as `yes` or `unanswerable`.
pub fn normalize_answer(text: &str) -> String {
    normalize_value(text)
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim_end()
        .to_lowercase()
}

/// True when two slot values are equal under [`normalize_value`].
pub fn values_match(a: &str, b: &str) -> bool {
    normalize_value(a) == normalize_value(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_normalization_trims_only() {
        assert_eq!(normalize_value("  2 people\t"), "2 people");
        assert_eq!(normalize_value("Monday"), "Monday");
        assert!(values_match(" 2 ", "2"));
        assert!(!values_match("Two", "two"));
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer("Yes."), "yes");
        assert_eq!(normalize_answer("  Unanswerable!? "), "unanswerable");
        assert_eq!(normalize_answer("no"), "no");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("..."), "");
    }
}
