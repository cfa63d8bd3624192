//! Whitespace-separated text vectors: an optional `V d` header line, then
//! `token v1 ... vd` per line.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Vocabulary, PAD_INDEX};
use crate::autodiff::Tensor;

/// Half-width of the uniform range for rows the vector file does not cover.
pub const OOV_INIT_RANGE: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct PretrainedEmbeddings {
    /// `[V × d]`; row 0 is zero.
    pub matrix: Tensor,
    /// In-vocabulary tokens (padding excluded) found in the file.
    pub found: usize,
    /// Vocabulary size excluding padding.
    pub total: usize,
}

impl PretrainedEmbeddings {
    /// Fraction of the vocabulary covered by the file, in `[0, 1]`.
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.found as f64 / self.total as f64
        }
    }
}

pub fn load_pretrained(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<PretrainedEmbeddings, DataError> {
    let content = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_pretrained(&content, vocab, dim, seed)
}

/// Every row starts uniform in `[-0.25, 0.25]` (drawn in index order from
/// `seed`); rows of tokens present in the file are then overwritten.
pub fn parse_pretrained(content: &str, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<PretrainedEmbeddings, DataError> {
    if dim == 0 {
        return Err(DataError::DimensionMismatch { expected: 0, found: 0 });
    }
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..v * dim).map(|_| rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE)).collect();
    data[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);

    let mut filled = HashSet::new();
    let mut file_dim: Option<usize> = None;
    let mut first = true;
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && fields.len() == 2 {
            if let (Ok(_), Ok(declared)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if declared != dim {
                    return Err(DataError::DimensionMismatch {
                        expected: dim,
                        found: declared,
                    });
                }
                file_dim = Some(declared);
                continue;
            }
        }
        let width = fields.len() - 1;
        match file_dim {
            None if width != dim => {
                return Err(DataError::DimensionMismatch {
                    expected: dim,
                    found: width,
                })
            }
            Some(d) if width != d => {
                return Err(DataError::VectorParse {
                    line,
                    message: format!("expected {} fields, found {}", d + 1, fields.len()),
                })
            }
            _ => file_dim = Some(width),
        }
        let mut values = Vec::with_capacity(dim);
        for f in &fields[1..] {
            let x: f64 = f.parse().map_err(|_| DataError::VectorParse {
                line,
                message: format!("'{f}' is not a number"),
            })?;
            if !x.is_finite() {
                return Err(DataError::VectorParse {
                    line,
                    message: format!("'{f}' is not finite"),
                });
            }
            values.push(x);
        }
        if let Some(idx) = vocab.get(fields[0]) {
            // First occurrence wins.
            if filled.insert(idx) {
                data[idx * dim..(idx + 1) * dim].copy_from_slice(&values);
            }
        }
    }
    let matrix = Tensor::new(vec![v, dim], data).expect("vocabulary has the padding row");
    Ok(PretrainedEmbeddings {
        matrix,
        found: filled.len(),
        total: v - 1,
    })
}
