//! Tokenization shared by the embedding stub, the desk encoder and EDA.

/// Lower-cased word tokens. Anything that is not alphanumeric (or `_`, `'`)
/// separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
