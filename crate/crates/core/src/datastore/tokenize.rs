/// Tokens together with their `[start, end)` character offsets in the source.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tokenized {
    pub tokens: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
}

/// Canonical tokenizer: splits on whitespace, and every punctuation
/// character becomes its own token.
pub fn tokenize(text: &str) -> Tokenized {
    let mut out = Tokenized::default();
    let mut current = String::new();
    let mut start = 0;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_whitespace() || is_punct(ch) {
            if !current.is_empty() {
                out.tokens.push(std::mem::take(&mut current));
                out.offsets.push((start, pos));
            }
            if !ch.is_whitespace() {
                out.tokens.push(ch.to_string());
                out.offsets.push((pos, pos + 1));
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.push(ch);
        }
    }
    if !current.is_empty() {
        let end = start + current.chars().count();
        out.tokens.push(current);
        out.offsets.push((start, end));
    }
    out
}

fn is_punct(ch: char) -> bool {
    ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace() && !ch.is_ascii())
}
