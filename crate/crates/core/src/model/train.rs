use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgcnnModel, ModelError};
use crate::autodiff::Tape;
use crate::data::{Sample, PAD_INDEX};

/// Adam state, one moment pair per parameter in canonical order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn for_model(model: &AgcnnModel) -> Self {
        let o = &model.hp.optimizer;
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` is `None` for frozen parameters.
    pub fn update(&mut self, model: &mut AgcnnModel, grads: &[Option<Vec<f64>>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, param) in model.params_mut().into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let step = self.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
                *p -= step;
            }
        }
    }
}

/// Batch-mean gradients of the loss, aligned with [`AgcnnModel::params`];
/// `None` marks parameters that are not trained. Also returns the mean loss.
pub fn batch_gradients<R: Rng + ?Sized>(
    model: &AgcnnModel,
    batch: &[Sample],
    rng: &mut R,
) -> Result<(f64, Vec<Option<Vec<f64>>>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let params = model.params();
    let n_params = params.len();
    let mut grads: Vec<Option<Vec<f64>>> = params.iter().map(|(_, t)| Some(vec![0.0; t.len()])).collect();
    if !model.embedding_trainable() {
        grads[0] = None;
    }
    if model.hp.activation != crate::autodiff::ActivationKind::PRelu {
        grads[n_params - 2] = None;
    }
    if !(model.hp.use_attention && model.hp.gate_kind() == crate::autodiff::ActivationKind::PRelu) {
        grads[n_params - 1] = None;
    }
    let d = model.hp.embedding_dim;
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for sample in batch {
        if sample.label >= model.hp.classes {
            return Err(ModelError::LabelOutOfRange {
                label: sample.label,
                classes: model.hp.classes,
            });
        }
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, true);
        let fwd = model.forward_graph(&mut tape, &vars, &sample.ids, true, rng)?;
        let loss = tape.softmax_xent(fwd.logits, sample.label)?;
        let value = tape.data(loss)[0];
        if !value.is_finite() {
            return Err(ModelError::Divergence {
                loss: value,
                config: model.hp.summary(),
            });
        }
        total += value;
        tape.backward(loss)?;

        let mut leaves = Vec::with_capacity(n_params);
        for &(k, b) in vars.conv.iter().chain(&vars.attn) {
            leaves.push(k);
            leaves.push(b);
        }
        leaves.extend([vars.dense_weight, vars.dense_bias, vars.act_slope, vars.gate_slope]);
        for (slot, var) in grads[1..].iter_mut().zip(leaves) {
            if let (Some(acc), Some(g)) = (slot.as_mut(), tape.grad(var)) {
                acc.iter_mut().zip(g).for_each(|(a, x)| *a += inv * x);
            }
        }
        if let (Some(acc), Some(g)) = (grads[0].as_mut(), tape.grad(fwd.embedded)) {
            for (pos, &id) in fwd.ids.iter().enumerate() {
                if id == PAD_INDEX {
                    continue;
                }
                let row = &mut acc[id * d..(id + 1) * d];
                row.iter_mut().zip(&g[pos * d..(pos + 1) * d]).for_each(|(a, x)| *a += inv * x);
            }
        }
    }
    Ok((total * inv, grads))
}

/// One optimizer step on a mini-batch; returns the mean loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut AgcnnModel,
    optimizer: &mut Adam,
    batch: &[Sample],
    rng: &mut R,
) -> Result<f64, ModelError> {
    let (loss, grads) = batch_gradients(model, batch, rng)?;
    optimizer.update(model, &grads);
    if let Some(cap) = model.hp.optimizer.max_norm {
        clip_rows(model, cap);
    }
    let diverged = model
        .params()
        .iter()
        .any(|(_, t)| t.data().iter().any(|v| !v.is_finite()));
    if diverged {
        return Err(ModelError::Divergence {
            loss,
            config: model.hp.summary(),
        });
    }
    Ok(loss)
}

fn clip_rows(model: &mut AgcnnModel, cap: f64) {
    let m = model.hp.pooled_dim();
    for row in model.dense_weight.data_mut().chunks_exact_mut(m) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cap {
            let s = cap / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: Option<f64>,
}

/// Trains for `hp.optimizer.epochs` epochs, reshuffling each epoch.
/// Shuffling and dropout share one ChaCha8 stream seeded by `seed`.
pub fn fit(model: &mut AgcnnModel, data: &[Sample], seed: u64) -> Result<Vec<EpochLog>, ModelError> {
    let epochs = model.hp.optimizer.epochs;
    fit_with(model, data, seed, epochs, |_| false)
}

/// Like [`fit`] with an explicit epoch budget and an early-stop predicate
/// evaluated after every epoch.
pub fn fit_with<F>(
    model: &mut AgcnnModel,
    data: &[Sample],
    seed: u64,
    epochs: usize,
    mut stop: F,
) -> Result<Vec<EpochLog>, ModelError>
where
    F: FnMut(&AgcnnModel) -> bool,
{
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::for_model(model);
    let batch = model.hp.optimizer.batch_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let samples: Vec<Sample> = chunk.iter().map(|&i| data[i].clone()).collect();
            loss_sum += train_step(model, &mut opt, &samples, &mut rng)?;
            batches += 1;
        }
        logs.push(EpochLog {
            epoch,
            mean_loss: loss_sum / batches as f64,
            train_accuracy: None,
        });
        if stop(model) {
            break;
        }
    }
    Ok(logs)
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate(model: &AgcnnModel, data: &[Sample]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut correct = 0usize;
    for s in data {
        if model.predict(&s.ids)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
