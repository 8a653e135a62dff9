/// Lowercases and splits on every character that is not alphanumeric, so
/// punctuation and whitespace both act as boundaries and are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Number of whitespace-separated words before tokenization.
pub fn whitespace_words(text: &str) -> usize {
    text.split_whitespace().count()
}
