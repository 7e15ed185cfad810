/// Lowercased whitespace tokens with surrounding punctuation stripped.
/// Internal apostrophes survive (`that's` stays one token).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// First `max_tokens` tokens of `text`, space-joined.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    tokenize(text)
        .into_iter()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}
