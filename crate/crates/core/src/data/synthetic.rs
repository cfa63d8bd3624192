//! Deterministic synthetic corpora for smoke tests and desk-scale checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Example, LabeledCorpus};

const POSITIVE: [&str; 5] = ["good", "great", "excellent", "wonderful", "superb"];
const NEGATIVE: [&str; 5] = ["bad", "awful", "terrible", "poor", "boring"];
const NEGATORS: [&str; 2] = ["not", "never"];
const FILLER: [&str; 30] = [
    "the", "movie", "plot", "was", "film", "story", "acting", "a", "this", "it", "very", "really", "quite",
    "and", "but", "script", "cast", "scenes", "ending", "music", "direction", "overall", "i", "thought",
    "felt", "seemed", "pretty", "so", "its", "frankly",
];

/// Two-class sentiment corpus of `n` sentences with 4 to 12 tokens each.
///
/// Every sentence carries one polarity keyword. When a negator directly
/// precedes the keyword the polarity flips; about half of the remaining
/// sentences contain a negator somewhere else, which does not flip it. Only the
/// bigram tells the two cases apart. Labels alternate, so the classes are
/// balanced exactly (1 = positive).
pub fn negation_corpus(n: usize, seed: u64) -> LabeledCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let label = i % 2;
            let negated = rng.gen_bool(0.5);
            let positive_word = (label == 1) != negated;
            let len = rng.gen_range(4..=12);
            let mut tokens: Vec<&str> = (0..len).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
            let at = rng.gen_range(1..len);
            tokens[at] = if positive_word {
                POSITIVE.choose(&mut rng).unwrap()
            } else {
                NEGATIVE.choose(&mut rng).unwrap()
            };
            if negated {
                tokens[at - 1] = NEGATORS.choose(&mut rng).unwrap();
            } else if rng.gen_bool(0.5) {
                let slots: Vec<usize> = (0..len).filter(|&q| q + 1 != at && q != at).collect();
                if let Some(&q) = slots.choose(&mut rng) {
                    tokens[q] = NEGATORS.choose(&mut rng).unwrap();
                }
            }
            Example {
                label,
                tokens: tokens.into_iter().map(str::to_string).collect(),
            }
        })
        .collect();
    LabeledCorpus::new("synthetic_negation", examples).expect("generator emits both classes")
}

/// Sentences of a single distinct token whose label is the token's identity:
/// `classes` classes, one sentence each, repeated `copies` times.
pub fn memorization_corpus(classes: usize, copies: usize) -> LabeledCorpus {
    let examples = (0..copies)
        .flat_map(|_| {
            (0..classes).map(|c| Example {
                label: c,
                tokens: vec![format!("tok{c}")],
            })
        })
        .collect();
    LabeledCorpus::new("memorize", examples).expect("at least two classes")
}
