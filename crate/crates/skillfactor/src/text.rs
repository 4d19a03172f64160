//! Token-level text utilities shared across the pipeline.
//!
//! Every stage that compares prose to prose (frame extraction, the coverage
//! and binding checks, the BE overlap post-check, bundle containment) goes
//! through the same normalization so that scores are comparable and the
//! acceptance oracles can reproduce them independently.

use std::collections::BTreeSet;

/// Function words ignored when picking a frame verb or its objects.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "an", "and",
    "any", "are", "as", "at", "be", "before", "below", "between", "both",
    "but", "by", "do", "down", "during", "each", "else", "few", "for",
    "from", "further", "here", "how", "if", "in", "into", "is", "it", "its",
    "more", "most", "no", "not", "of", "off", "on", "once", "only", "or",
    "other", "our", "out", "over", "so", "some", "such", "than", "that",
    "the", "their", "then", "there", "these", "they", "this", "those",
    "through", "to", "under", "until", "up", "use", "very", "when", "where",
    "which", "while", "will", "with", "you", "your",
];

/// Minimum token length kept after normalization.
pub const MIN_TOKEN_LEN: usize = 3;

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercase tokens split on every non-alphanumeric boundary.
///
/// Keeps tokens of any length and keeps stopwords; callers filter as needed.
pub fn raw_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Normalized token multiset used for embeddings and similarity.
///
/// Lowercased, split on non-alphanumeric boundaries, tokens shorter than
/// [`MIN_TOKEN_LEN`] dropped.
pub fn tokens(text: &str) -> Vec<String> {
    raw_tokens(text)
        .into_iter()
        .filter(|t| t.len() >= MIN_TOKEN_LEN)
        .collect()
}

/// Deduplicated variant of [`tokens`].
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

/// Identifier-aware normalization for schema names.
///
/// `source_receptacle` and `SourceReceptacle` both yield
/// `["source", "receptacle"]` so an input name can be matched against prose.
pub fn identifier_tokens(name: &str) -> Vec<String> {
    let mut pieces = Vec::new();
    for part in name.split(|c: char| !c.is_alphanumeric()) {
        if part.is_empty() {
            continue;
        }
        let mut cur = String::new();
        let mut prev_lower = false;
        for ch in part.chars() {
            if ch.is_uppercase() && prev_lower && !cur.is_empty() {
                pieces.push(std::mem::take(&mut cur));
            }
            prev_lower = ch.is_lowercase();
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        }
        if !cur.is_empty() {
            pieces.push(cur);
        }
    }
    pieces
        .into_iter()
        .filter(|t| t.len() >= MIN_TOKEN_LEN)
        .collect()
}

/// The first sentence of a unit body, used for frame extraction.
///
/// Skips markdown list markers and blank lines, then cuts at the first
/// sentence terminator or end of line.
pub fn first_sentence(body: &str) -> &str {
    for line in body.lines() {
        let trimmed = line
            .trim_start()
            .trim_start_matches(['-', '*', '>', '#'])
            .trim_start();
        // strip ordered-list markers like "3."
        let trimmed = match trimmed.split_once('.') {
            Some((head, rest)) if head.chars().all(|c| c.is_ascii_digit()) && !head.is_empty() => {
                rest.trim_start()
            }
            _ => trimmed,
        };
        if trimmed.is_empty() || !trimmed.chars().any(|c| c.is_alphabetic()) {
            continue;
        }
        for (idx, ch) in trimmed.char_indices() {
            if ch == '.' || ch == '!' || ch == '?' || ch == ';' {
                return &trimmed[..idx];
            }
        }
        return trimmed;
    }
    ""
}

/// GitHub-style anchor slug for a heading, used by the replacement check.
pub fn heading_slug(heading: &str) -> String {
    let mut slug = String::new();
    for ch in heading.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                slug.push(lc);
            }
        } else if ch == ' ' || ch == '-' || ch == '_' {
            slug.push('-');
        }
    }
    while slug.contains("--") {
        slug = slug.replace("--", "-");
    }
    slug.trim_matches('-').to_string()
}

/// FNV-1a 64-bit hash; stable across platforms and runs.
pub fn fnv1a(data: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in data.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}
