//! Word-level tokenization shared by cleaning, templates and metrics.

use std::sync::LazyLock;

use regex::Regex;

/// Slot tokens used in templates.
pub const SLOT_TOKENS: [&str; 5] = ["[NP]", "[ADJP]", "[ADVP]", "[V]", "[OTHER]"];

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[(?:NP|ADJP|ADVP|V|OTHER)\]|\w+(?:['’.\-]\w+)*|[^\w\s]").expect("static regex")
});

/// Splits raw text into words and single punctuation characters. Slot
/// tokens such as `[NP]` survive as one token; apostrophes, hyphens and
/// periods inside a word do not split it.
pub fn tokenize(text: &str) -> Vec<String> {
    TOKEN_RE
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

pub fn is_slot_token(token: &str) -> bool {
    SLOT_TOKENS.contains(&token)
}

/// A token with no letter or digit (and not a slot token).
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && !is_slot_token(token) && !token.chars().any(char::is_alphanumeric)
}

pub fn is_word(token: &str) -> bool {
    !is_slot_token(token) && token.chars().any(char::is_alphanumeric)
}

/// Joins tokens with spaces, attaching closing punctuation to the left.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut attach_next = false;
    for tok in tokens {
        let tok = tok.as_ref();
        let closing = matches!(tok, "?" | "." | "!" | "," | ";" | ":" | ")" | "%");
        if !out.is_empty() && !closing && !attach_next {
            out.push(' ');
        }
        out.push_str(tok);
        attach_next = matches!(tok, "(" | "$");
    }
    out
}
