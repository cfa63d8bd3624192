//! Corpus I/O, text normalization, vocabularies, pre-trained vectors and
//! cross-validation fold plans.

mod clean;
mod corpus;
mod folds;
pub mod synthetic;
mod vectors;
mod vocab;

use std::path::PathBuf;

use thiserror::Error;

pub use clean::{clean_text, tokenize};
pub use corpus::{encode_corpus, load_corpus, pad_tokens, parse_corpus, CorpusFormat, Example, LabeledCorpus, Sample};
pub use folds::{kfold_plan, kfold_plan_with, FoldPlan};
pub use vectors::{load_pretrained, parse_pretrained, PretrainedEmbeddings};
pub use vocab::{build_vocab, Vocabulary, PAD_INDEX, PAD_TOKEN};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: missing tab between label and text")]
    MissingTab { line: usize },
    #[error("line {line}: label '{value}' is not a non-negative base-10 integer")]
    LabelParse { line: usize, value: String },
    #[error("labels are not dense: class {missing} of 0..{classes} never occurs")]
    LabelGap { missing: usize, classes: usize },
    #[error("corpus needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("corpus has no examples")]
    EmptyCorpus,
    #[error("example {index} has no tokens")]
    EmptyExample { index: usize },
    #[error("vector dimension mismatch: expected {expected}, file has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector file line {line}: {message}")]
    VectorParse { line: usize, message: String },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("stratification infeasible: class {class} has {count} examples for {k} folds")]
    StratificationInfeasible { class: usize, count: usize, k: usize },
    #[error("{n} examples cannot fill {k} folds")]
    TooFewExamples { n: usize, k: usize },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
