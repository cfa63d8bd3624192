use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::presets::ABLATION_DELTAS;
use super::spec::{value_label, Axis, SweepSpec};
use super::trial::{pct_change, run_replication, Aggregate, Dataset};
use super::SweepError;
use crate::model::HyperParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub corpus: String,
    pub examples: usize,
    pub classes: usize,
    pub vocab_hash: String,
    pub axis: Axis,
    pub replications: usize,
    pub folds: usize,
    pub seed: u64,
    /// `false` when any trial in the report failed.
    pub complete: bool,
    /// Creation time; the only field that varies between identical runs.
    pub timestamp_unix: u64,
    pub spec: SweepSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub axis_value: Value,
    pub label: String,
    pub aggregate: Aggregate,
    /// Relative change against the baseline aggregate, in percent.
    pub pct_change: Option<f64>,
    /// Absolute change against the baseline aggregate, in percentage points.
    pub pct_points: Option<f64>,
    pub is_baseline: bool,
}

/// Labelled comparison between two rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub label: String,
    pub from: String,
    pub to: String,
    pub pct_change: Option<f64>,
    pub pct_points: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metadata: ReportMetadata,
    pub baseline: Option<Aggregate>,
    pub rows: Vec<ReportRow>,
    pub deltas: Vec<Delta>,
}

fn changes(value: &Aggregate, base: &Aggregate) -> (Option<f64>, Option<f64>) {
    if value.n_replications == 0 || base.n_replications == 0 {
        return (None, None);
    }
    let rel = pct_change(value.mean_accuracy, base.mean_accuracy).ok();
    (rel, Some(100.0 * (value.mean_accuracy - base.mean_accuracy)))
}

/// Runs every (value, replication) trial of `spec` on a pool of `workers`
/// threads and aggregates them in value order. Trials seed themselves from
/// `(spec.seed, replication)` alone, so the result does not depend on
/// `workers`. Failed trials are excluded from aggregates and flagged.
pub fn run_sweep(spec: &SweepSpec, data: &Dataset, workers: usize) -> Result<SweepReport, SweepError> {
    let mut configs = spec.validate()?;
    let baseline_idx = spec.baseline_index(&configs);
    let extra_baseline = baseline_idx.is_none();
    if extra_baseline {
        configs.push(spec.baseline.clone());
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..spec.replications).map(move |r| (c, r)))
        .collect();
    let run = |&(c, r): &(usize, usize)| run_replication(&configs[c], data, spec.folds, spec.seed, r, spec.stratified);
    let results = if workers <= 1 {
        jobs.iter().map(run).collect::<Result<Vec<_>, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| SweepError::InvalidSpec(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>, _>>())?
    };
    let mut results = results.into_iter();
    let aggregates: Vec<Aggregate> = configs
        .iter()
        .map(|c| Aggregate::from_trials(c.clone(), spec.seed, results.by_ref().take(spec.replications).collect()))
        .collect();
    Ok(assemble(spec, data, aggregates, baseline_idx))
}

fn assemble(spec: &SweepSpec, data: &Dataset, mut aggregates: Vec<Aggregate>, baseline_idx: Option<usize>) -> SweepReport {
    let baseline = match baseline_idx {
        Some(i) => aggregates[i].clone(),
        None => aggregates.pop().expect("extra baseline aggregate"),
    };
    let rows: Vec<ReportRow> = spec
        .values
        .iter()
        .zip(aggregates)
        .enumerate()
        .map(|(i, (v, agg))| {
            let is_baseline = Some(i) == baseline_idx;
            let (rel, points) = if is_baseline && agg.n_replications > 0 {
                (Some(0.0), Some(0.0))
            } else {
                changes(&agg, &baseline)
            };
            ReportRow {
                axis_value: v.clone(),
                label: value_label(v),
                aggregate: agg,
                pct_change: rel,
                pct_points: points,
                is_baseline,
            }
        })
        .collect();
    let deltas = deltas_for(spec.axis, &rows);
    let complete = baseline.complete && rows.iter().all(|r| r.aggregate.complete);
    SweepReport {
        metadata: ReportMetadata {
            corpus: data.corpus.name.clone(),
            examples: data.corpus.len(),
            classes: data.corpus.classes,
            vocab_hash: data.vocab.hash().to_string(),
            axis: spec.axis,
            replications: spec.replications,
            folds: spec.folds,
            seed: spec.seed,
            complete,
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            spec: spec.clone(),
        },
        baseline: Some(baseline),
        rows,
        deltas,
    }
}

fn deltas_for(axis: Axis, rows: &[ReportRow]) -> Vec<Delta> {
    let find = |label: &str| rows.iter().find(|r| r.label == label);
    let delta = |label: String, a: &ReportRow, b: &ReportRow| {
        let (rel, points) = changes(&b.aggregate, &a.aggregate);
        Delta {
            label,
            from: a.label.clone(),
            to: b.label.clone(),
            pct_change: rel,
            pct_points: points,
        }
    };
    match axis {
        Axis::AblationRung => ABLATION_DELTAS
            .iter()
            .filter_map(|&(a, b, label)| Some(delta(label.to_string(), find(a)?, find(b)?)))
            .collect(),
        Axis::PresetVariant => rows
            .iter()
            .filter_map(|r| {
                let rest = r.label.strip_prefix("proposed/")?;
                let base = find(&format!("baseline/{rest}"))?;
                Some(delta(format!("proposed over baseline ({rest})"), base, r))
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn spec_for(
    base: &HyperParams,
    axis: Axis,
    values: Vec<Value>,
    data: &Dataset,
    folds: usize,
    replications: usize,
    seed: u64,
) -> SweepSpec {
    SweepSpec {
        corpus: data.corpus.name.clone(),
        corpus_format: Default::default(),
        embeddings: None,
        baseline: base.clone(),
        axis,
        values,
        baseline_value: None,
        replications,
        folds,
        seed,
        stratified: true,
        output: format!("{}_{}", data.corpus.name, axis.name()),
    }
}

/// One-factor-at-a-time sweep run on a single thread.
pub fn ofat_sweep(spec: &SweepSpec, data: &Dataset) -> Result<SweepReport, SweepError> {
    run_sweep(spec, data, 1)
}

/// Which layer's window sizes a grid search varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLayer {
    FirstConv,
    Attention,
}

/// One row per window combination, in input order.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_windows(
    layer: WindowLayer,
    combos: &[Vec<usize>],
    base: &HyperParams,
    data: &Dataset,
    folds: usize,
    replications: usize,
    seed: u64,
    workers: usize,
) -> Result<SweepReport, SweepError> {
    let axis = match layer {
        WindowLayer::FirstConv => Axis::ConvWindowCombo,
        WindowLayer::Attention => Axis::AttnWindowCombo,
    };
    let values = combos.iter().map(|c| Value::from(c.clone())).collect();
    run_sweep(&spec_for(base, axis, values, data, folds, replications, seed), data, workers)
}

/// The five-rung ladder from a plain text CNN to the gated network with each
/// activation, with labelled rung-to-rung deltas.
pub fn ablation_ladder(
    base: &HyperParams,
    data: &Dataset,
    folds: usize,
    replications: usize,
    seed: u64,
    workers: usize,
) -> Result<SweepReport, SweepError> {
    let values = super::presets::ABLATION_RUNGS.iter().map(|&r| Value::from(r)).collect();
    run_sweep(
        &spec_for(base, Axis::AblationRung, values, data, folds, replications, seed),
        data,
        workers,
    )
}
