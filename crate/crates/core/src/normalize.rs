//! Canonical form for cube values and query entities.

use unicode_normalization::UnicodeNormalization;

const QUOTE_PAIRS: &[(char, char)] = &[
    ('"', '"'),
    ('\'', '\''),
    ('`', '`'),
    ('\u{201c}', '\u{201d}'),
    ('\u{2018}', '\u{2019}'),
    ('\u{ab}', '\u{bb}'),
];

/// NFKC, lowercase, collapse whitespace, trim, and strip enclosing quote
/// pairs. Internal punctuation is kept. May return an empty string; callers
/// drop empty values.
pub fn normalize_value(raw: &str) -> String {
    let lowered = raw.nfkc().collect::<String>().to_lowercase();
    let folded: String = lowered.nfkc().collect();
    let mut out = collapse_whitespace(&folded);
    loop {
        let stripped = strip_enclosing_quotes(&out);
        if stripped.len() == out.len() {
            break;
        }
        out = stripped.trim().to_string();
    }
    out
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_enclosing_quotes(s: &str) -> String {
    let mut chars = s.chars();
    let (Some(first), Some(last)) = (chars.next(), s.chars().next_back()) else {
        return s.to_string();
    };
    if s.chars().count() < 2 {
        return s.to_string();
    }
    if QUOTE_PAIRS.iter().any(|&(open, close)| first == open && last == close) {
        let inner = &s[first.len_utf8()..s.len() - last.len_utf8()];
        return inner.to_string();
    }
    s.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rule_examples() {
        assert_eq!(normalize_value("  The Heart Of  Doreon "), "the heart of doreon");
        assert_eq!(normalize_value("FILM"), "film");
        assert_eq!(normalize_value("Robert N. Bradbury"), "robert n. bradbury");
    }

    #[test]
    fn quotes_and_compatibility_forms() {
        assert_eq!(normalize_value("'El Tonto'"), "el tonto");
        assert_eq!(normalize_value("\u{201c} El\tTonto \u{201d}"), "el tonto");
        assert_eq!(normalize_value("\"'nested'\""), "nested");
        assert_eq!(normalize_value("it's"), "it's");
        assert_eq!(normalize_value("\u{FF26}\u{FF29}\u{FF2C}\u{FF2D}"), "film");
        assert_eq!(normalize_value("\"\""), "");
        assert_eq!(normalize_value("   "), "");
        assert_eq!(normalize_value("\""), "\"");
    }

    proptest! {
        #[test]
        fn idempotent(s in ".{0,40}") {
            let once = normalize_value(&s);
            prop_assert_eq!(normalize_value(&once), once.clone());
            prop_assert_eq!(once.trim(), once.as_str());
            prop_assert!(!once.contains("  "));
        }
    }
}
