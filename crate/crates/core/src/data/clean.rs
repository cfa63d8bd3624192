use std::sync::LazyLock;

use regex::Regex;

static CONTRACTIONS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)('s|'ve|n't|'re|'d|'ll)").expect("static pattern"));

static WHITESPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").expect("static pattern"));

const SPACED_PUNCT: [char; 6] = [',', '!', '?', '(', ')', '"'];

/// Normalizes a raw sentence: splits off contractions (`'s 've n't 're 'd
/// 'll`), spaces out `, ! ? ( ) "`, collapses whitespace, trims, and
/// lowercases unless `preserve_case` is set.
pub fn clean_text(raw: &str, preserve_case: bool) -> String {
    let s = CONTRACTIONS.replace_all(raw, " $1");
    let mut spaced = String::with_capacity(s.len() + 8);
    for ch in s.chars() {
        if SPACED_PUNCT.contains(&ch) {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    let collapsed = WHITESPACE.replace_all(spaced.trim(), " ").into_owned();
    if preserve_case {
        collapsed
    } else {
        collapsed.to_lowercase()
    }
}

pub fn tokenize(cleaned: &str) -> Vec<String> {
    cleaned.split_whitespace().map(str::to_string).collect()
}
