use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledCorpus};

/// Assignment of every example to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold plan for a corpus.
pub fn kfold_plan(corpus: &LabeledCorpus, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    kfold_plan_with(&corpus.labels(), corpus.classes, k, seed, true)
}

/// Shuffles each class with `seed` and deals its members round-robin over the
/// folds, continuing the rotation from one class to the next so fold sizes
/// stay within one of each other. Unstratified plans deal a single shuffled
/// list instead.
pub fn kfold_plan_with(
    labels: &[usize],
    classes: usize,
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<FoldPlan, DataError> {
    if k < 2 {
        return Err(DataError::InvalidFoldCount(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        let mut groups = vec![Vec::new(); classes];
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(DataError::LabelOutOfRange { label, classes });
            }
            groups[label].push(i);
        }
        for (class, g) in groups.iter().enumerate() {
            if g.len() < k {
                return Err(DataError::StratificationInfeasible {
                    class,
                    count: g.len(),
                    k,
                });
            }
        }
        groups
    } else {
        if labels.len() < k {
            return Err(DataError::TooFewExamples { n: labels.len(), k });
        }
        vec![(0..labels.len()).collect()]
    };

    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for idx in group {
            assignments[idx] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        stratified,
        assignments,
    })
}
