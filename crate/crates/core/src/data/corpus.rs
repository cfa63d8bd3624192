use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{clean_text, tokenize, DataError, Vocabulary, PAD_INDEX};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub label: usize,
    pub tokens: Vec<String>,
}

/// Labeled sentences with dense class indices `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCorpus {
    pub name: String,
    pub examples: Vec<Example>,
    pub classes: usize,
}

impl LabeledCorpus {
    /// Validates the examples and infers the class count as `max label + 1`.
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Result<Self, DataError> {
        let classes = examples.iter().map(|e| e.label + 1).max().ok_or(DataError::EmptyCorpus)?;
        Self::with_classes(name, examples, classes)
    }

    pub fn with_classes(name: impl Into<String>, examples: Vec<Example>, classes: usize) -> Result<Self, DataError> {
        if examples.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        if classes < 2 {
            return Err(DataError::TooFewClasses(classes));
        }
        let mut seen = vec![false; classes];
        for (index, e) in examples.iter().enumerate() {
            if e.tokens.is_empty() || e.tokens.iter().any(String::is_empty) {
                return Err(DataError::EmptyExample { index });
            }
            if e.label >= classes {
                return Err(DataError::LabelOutOfRange {
                    label: e.label,
                    classes,
                });
            }
            seen[e.label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DataError::LabelGap { missing, classes });
        }
        Ok(LabeledCorpus {
            name: name.into(),
            examples,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn max_len(&self) -> usize {
        self.examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0)
    }

    /// Canonical `LABEL<TAB>TEXT` serialization, tokens joined by single spaces.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&e.label.to_string());
            out.push('\t');
            out.push_str(&e.tokens.join(" "));
            out.push('\n');
        }
        out
    }
}

/// How the text column of a dataset file is turned into tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// Text is already normalized; split on whitespace only.
    Tokenized,
    /// Run [`clean_text`] with lowercasing.
    #[default]
    Clean,
    /// Run [`clean_text`] keeping case (question-type data).
    CleanPreserveCase,
}

impl CorpusFormat {
    fn tokens(self, text: &str) -> Vec<String> {
        match self {
            CorpusFormat::Tokenized => tokenize(text),
            CorpusFormat::Clean => tokenize(&clean_text(text, false)),
            CorpusFormat::CleanPreserveCase => tokenize(&clean_text(text, true)),
        }
    }
}

/// Parses `LABEL<TAB>TEXT` lines. Blank lines and lines whose text is empty
/// after normalization are skipped.
pub fn parse_corpus(name: &str, content: &str, format: CorpusFormat) -> Result<LabeledCorpus, DataError> {
    let mut examples = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (label, text) = raw.split_once('\t').ok_or(DataError::MissingTab { line })?;
        let label: usize = label.trim().parse().map_err(|_| DataError::LabelParse {
            line,
            value: label.to_string(),
        })?;
        let tokens = format.tokens(text);
        if tokens.is_empty() {
            continue;
        }
        examples.push(Example { label, tokens });
    }
    LabeledCorpus::new(name, examples)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LabeledCorpus, DataError> {
    let content = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_corpus(&name, &content, format)
}

/// An encoded example ready for the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// Right-pads `ids` with the padding index up to `min_len`.
pub fn pad_tokens(mut ids: Vec<usize>, min_len: usize) -> Vec<usize> {
    if ids.len() < min_len {
        ids.resize(min_len, PAD_INDEX);
    }
    ids
}

/// Maps every example through `vocab` (unknown tokens become padding) and
/// pads to at least `min_len` tokens.
pub fn encode_corpus(corpus: &LabeledCorpus, vocab: &Vocabulary, min_len: usize) -> Vec<Sample> {
    corpus
        .examples
        .iter()
        .map(|e| Sample {
            ids: pad_tokens(vocab.encode(&e.tokens), min_len),
            label: e.label,
        })
        .collect()
}
