use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::data::{
    build_vocab, encode_corpus, kfold_plan_with, FoldPlan, LabeledCorpus, PretrainedEmbeddings, Sample, Vocabulary,
};
use crate::model::{evaluate, fit, AgcnnModel, EmbeddingMode, HyperParams, ModelError};

/// A corpus prepared once for many trials: vocabulary over the whole corpus,
/// encoded samples and, optionally, pre-trained vectors for static mode.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub corpus: LabeledCorpus,
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
    pub pretrained: Option<PretrainedEmbeddings>,
}

impl Dataset {
    pub fn new(corpus: LabeledCorpus) -> Self {
        let vocab = build_vocab(&corpus);
        let samples = encode_corpus(&corpus, &vocab, 1);
        Dataset {
            corpus,
            vocab,
            samples,
            pretrained: None,
        }
    }

    pub fn with_pretrained(mut self, pretrained: PretrainedEmbeddings) -> Self {
        self.pretrained = Some(pretrained);
        self
    }

    /// Fresh model for `hp`, with pre-trained vectors installed in static mode.
    /// The classifier width always follows the corpus.
    pub fn model(&self, hp: &HyperParams, seed: u64) -> Result<AgcnnModel, ModelError> {
        let mut hp = hp.clone();
        hp.classes = self.corpus.classes;
        let mut model = AgcnnModel::init(&hp, self.vocab.len(), seed)?;
        model.vocab_hash = self.vocab.hash().to_string();
        if let (EmbeddingMode::Static, Some(p)) = (hp.embedding_mode, &self.pretrained) {
            model.set_embedding(p.matrix.clone())?;
        }
        Ok(model)
    }
}

/// SplitMix64 finalizer over `seed` and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Relative change in percent: `100 * (value - baseline) / baseline`.
pub fn pct_change(value: f64, baseline: f64) -> Result<f64, SweepError> {
    if !(baseline > 0.0) {
        return Err(SweepError::NonPositiveBaseline(baseline));
    }
    Ok(100.0 * (value - baseline) / baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub fold: usize,
    pub message: String,
}

/// Cross-validated accuracy of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: HyperParams,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub replication: usize,
    pub seed: u64,
    pub failure: Option<TrialFailure>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Trains on all folds but one and evaluates on the held-out fold, for every
/// fold of `plan`. A divergent fold ends the trial and marks it failed.
pub fn run_trial(config: &HyperParams, data: &Dataset, plan: &FoldPlan, seed: u64) -> Result<TrialResult, SweepError> {
    config.validate()?;
    if plan.assignments.len() != data.samples.len() {
        return Err(SweepError::InvalidSpec(format!(
            "fold plan covers {} examples, corpus has {}",
            plan.assignments.len(),
            data.samples.len()
        )));
    }
    let start = Instant::now();
    let mut folds = Vec::with_capacity(plan.k);
    let mut failure = None;
    for f in 0..plan.k {
        let pick = |idx: Vec<usize>| -> Vec<Sample> { idx.into_iter().map(|i| data.samples[i].clone()).collect() };
        let train = pick(plan.train_indices(f));
        let test = pick(plan.test_indices(f));
        let outcome = data
            .model(config, derive_seed(seed, 2 * f as u64))
            .and_then(|mut model| {
                fit(&mut model, &train, derive_seed(seed, 2 * f as u64 + 1))?;
                evaluate(&model, &test)
            });
        match outcome {
            Ok(acc) => folds.push(acc),
            Err(e @ ModelError::Divergence { .. }) => {
                failure = Some(TrialFailure {
                    fold: f,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let (mean, std) = if failure.is_some() { (f64::NAN, f64::NAN) } else { mean_std(&folds) };
    Ok(TrialResult {
        config: config.clone(),
        fold_accuracies: folds,
        mean_accuracy: mean,
        std_accuracy: std,
        replication: 0,
        seed,
        failure,
        wall_time: start.elapsed(),
    })
}

/// Seed and fold plan of replication `rep`.
pub fn replication_plan(
    data: &Dataset,
    k: usize,
    seed: u64,
    rep: usize,
    stratified: bool,
) -> Result<(u64, FoldPlan), SweepError> {
    let rep_seed = derive_seed(seed, rep as u64);
    let plan = kfold_plan_with(&data.corpus.labels(), data.corpus.classes, k, rep_seed, stratified)?;
    Ok((rep_seed, plan))
}

/// Runs one replication: a fresh fold plan and trial under a derived seed.
pub fn run_replication(
    config: &HyperParams,
    data: &Dataset,
    k: usize,
    seed: u64,
    rep: usize,
    stratified: bool,
) -> Result<TrialResult, SweepError> {
    let (rep_seed, plan) = replication_plan(data, k, seed, rep, stratified)?;
    let mut trial = run_trial(config, data, &plan, rep_seed)?;
    trial.replication = rep;
    Ok(trial)
}

/// Trials of `r` replications averaged together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config: HyperParams,
    pub trials: Vec<TrialResult>,
    /// Mean over the successful replications' mean accuracies.
    pub mean_accuracy: f64,
    /// Population standard deviation of those means.
    pub std_accuracy: f64,
    /// Number of successful replications.
    pub n_replications: usize,
    pub seed: u64,
    /// `false` when any replication failed.
    pub complete: bool,
}

impl Aggregate {
    pub fn from_trials(config: HyperParams, seed: u64, trials: Vec<TrialResult>) -> Self {
        let means: Vec<f64> = trials.iter().filter(|t| t.succeeded()).map(|t| t.mean_accuracy).collect();
        let (mean, std) = mean_std(&means);
        Aggregate {
            config,
            complete: trials.iter().all(TrialResult::succeeded),
            n_replications: means.len(),
            mean_accuracy: mean,
            std_accuracy: std,
            seed,
            trials,
        }
    }

    pub fn wall_time(&self) -> Duration {
        self.trials.iter().map(|t| t.wall_time).sum()
    }
}

/// `r` replications of a `k`-fold trial, run sequentially.
pub fn replicate(config: &HyperParams, data: &Dataset, k: usize, r: usize, seed: u64) -> Result<Aggregate, SweepError> {
    if r == 0 {
        return Err(SweepError::InvalidSpec("replications must be >= 1".into()));
    }
    let trials = (0..r)
        .map(|rep| run_replication(config, data, k, seed, rep, true))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Aggregate::from_trials(config.clone(), seed, trials))
}
