//! Writes the synthetic negation corpus as `LABEL<TAB>TEXT` lines.
//!
//! `cargo run -p agcnn-core --example synthetic_corpus -- [N] [SEED] > data/synthetic_negation.tsv`

use agcnn_core::data::synthetic;

fn main() {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(2024);
    print!("{}", synthetic::negation_corpus(n, seed).to_tsv());
}
