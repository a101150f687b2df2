//! Shared text utilities: tokenization and answer normalization.
//!
//! Every consumer of these helpers (search scoring, leakage checks, judge
//! matching, token statistics) needs the exact same behavior, so the rules
//! live here once.

/// Lowercase alphanumeric tokens. Any non-alphanumeric byte is a separator.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token count used by the trajectory statistics: alphanumeric runs plus each
/// standalone punctuation character. Whitespace never counts.
pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !ch.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

/// Lowercase and collapse runs of whitespace into single spaces, trimming the
/// ends. This is the normalization used by leakage checks and fuzzy matching.
pub fn normalize_ws_lower(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !out.is_empty() {
                pending_space = true;
            }
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
        }
    }
    out
}

/// Strip trailing ASCII punctuation (`. , ! ? ; :`) after whitespace trimming.
pub fn strip_terminal_punct(text: &str) -> &str {
    text.trim()
        .trim_end_matches(['.', ',', '!', '?', ';', ':'])
        .trim_end()
}

/// Full answer normalization: lowercase, collapse whitespace, strip terminal
/// punctuation.
pub fn normalize_answer(text: &str) -> String {
    normalize_ws_lower(strip_terminal_punct(text))
}
