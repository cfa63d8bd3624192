use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::LabeledCorpus;

pub const PAD_INDEX: usize = 0;
pub const PAD_TOKEN: &str = "<pad>";

const HASH_DOMAIN: &[u8] = b"agcnn-vocab-v1\n";

/// Token → index map; index 0 is reserved for padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    hash: String,
}

/// Assigns indices from 1 upward in first-occurrence order. The hash covers
/// the full token stream of the corpus, so any token edit changes it even when
/// the resulting index map would be the same.
pub fn build_vocab(corpus: &LabeledCorpus) -> Vocabulary {
    let mut tokens = vec![PAD_TOKEN.to_string()];
    let mut index = HashMap::new();
    let mut hasher = Sha256::new();
    hasher.update(HASH_DOMAIN);
    for example in &corpus.examples {
        for tok in &example.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b" ");
            if tok.is_empty() || index.contains_key(tok) {
                continue;
            }
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok.clone());
        }
        hasher.update(b"\n");
    }
    Vocabulary {
        tokens,
        index,
        hash: hex(&hasher.finalize()),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its index-ordered token list (slot 0 is the
    /// padding token) and a previously computed hash.
    pub fn from_parts(tokens: Vec<String>, hash: String) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index, hash }
    }

    /// Number of indices including the padding slot.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Unknown tokens map to the padding index.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t).unwrap_or(PAD_INDEX)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_corpus, CorpusFormat};

    fn corpus(text: &str) -> LabeledCorpus {
        parse_corpus("t", text, CorpusFormat::Tokenized).unwrap()
    }

    #[test]
    fn first_occurrence_order() {
        let v = build_vocab(&corpus("0\ta b a\n1\tc b\n"));
        assert_eq!(v.get("a"), Some(1));
        assert_eq!(v.get("b"), Some(2));
        assert_eq!(v.get("c"), Some(3));
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(0), Some(PAD_TOKEN));
        assert_eq!(v.get(""), None);
    }

    #[test]
    fn hash_is_deterministic_and_sensitive() {
        let a = build_vocab(&corpus("0\ta b a\n1\tc b\n"));
        let b = build_vocab(&corpus("0\ta b a\n1\tc b\n"));
        assert_eq!(a.hash(), b.hash());
        // Same index map, different token stream.
        let c = build_vocab(&corpus("0\ta b b\n1\tc b\n"));
        assert_eq!(a.tokens(), c.tokens());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn literal_pad_token_gets_its_own_index() {
        let v = build_vocab(&corpus("0\t<pad> x\n1\ty\n"));
        assert_eq!(v.get(PAD_TOKEN), Some(1));
        assert_eq!(v.encode(&["zzz".to_string()]), vec![PAD_INDEX]);
    }

    #[test]
    fn from_parts_round_trip() {
        let v = build_vocab(&corpus("0\ta b\n1\tc\n"));
        let w = Vocabulary::from_parts(v.tokens().to_vec(), v.hash().to_string());
        assert_eq!(v, w);
    }
}
