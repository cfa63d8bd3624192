use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingMode, HyperParams, InitScheme, ModelError};
use crate::autodiff::{ActivationKind, Tape, Tensor, TensorError, Var, PRELU_INIT_SLOPE};

/// Range of the uniform initializer for kernels and dense weights.
pub const AGCNN_INIT_RANGE: f64 = 0.05;
/// Range of the uniform initializer for random word vectors.
pub const EMBEDDING_INIT_RANGE: f64 = 0.25;

/// First-layer kernels sharing one window size.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGroup {
    pub window: usize,
    /// `[n_maps_conv × window × d]`
    pub kernels: Tensor,
    /// `[n_maps_conv]`
    pub bias: Tensor,
}

/// Attention kernels sharing one window size; applied to every feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnGroup {
    pub window: usize,
    /// `[n_maps_attn × window]`
    pub kernels: Tensor,
    /// `[n_maps_attn]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgcnnModel {
    pub hp: HyperParams,
    /// `[V × d]`; row 0 is the padding vector and stays zero.
    pub embedding: Tensor,
    pub conv: Vec<ConvGroup>,
    /// Empty when attention is disabled.
    pub attn: Vec<AttnGroup>,
    /// `[classes × pooled_dim]`
    pub dense_weight: Tensor,
    pub dense_bias: Tensor,
    /// PReLU slope of the first-layer activation (unused for other kinds).
    pub act_slope: Tensor,
    /// PReLU slope of the gate activation (unused for other kinds).
    pub gate_slope: Tensor,
    /// Hash of the vocabulary the embedding rows are indexed by.
    pub vocab_hash: String,
}

/// Tape handles of every parameter, in [`AgcnnModel::param_names`] order
/// minus the embedding.
pub struct ParamVars {
    pub conv: Vec<(Var, Var)>,
    pub attn: Vec<(Var, Var)>,
    pub dense_weight: Var,
    pub dense_bias: Var,
    pub act_slope: Var,
    pub gate_slope: Var,
}

/// Result of building the graph for one sentence.
pub struct Forward {
    pub logits: Var,
    /// Gathered `[L × d]` embedding rows.
    pub embedded: Var,
    /// Padded token ids the rows were gathered from.
    pub ids: Vec<usize>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, range: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-range..=range)).collect()
}

fn shaped(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("parameter shapes are validated")
}

impl AgcnnModel {
    /// Fresh parameters for a vocabulary of `vocab_size` rows (padding
    /// included). Draws happen in parameter order from one ChaCha8 stream.
    pub fn init(hp: &HyperParams, vocab_size: usize, seed: u64) -> Result<Self, ModelError> {
        hp.validate()?;
        if vocab_size == 0 {
            return Err(ModelError::Config("vocabulary must contain the padding row".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = hp.embedding_dim;
        let mut emb = uniform(&mut rng, vocab_size * d, EMBEDDING_INIT_RANGE);
        emb[..d].fill(0.0);
        let conv = hp
            .conv_windows
            .iter()
            .map(|&h| {
                let n = hp.n_maps_conv * h * d;
                let range = match hp.init {
                    InitScheme::Agcnn => AGCNN_INIT_RANGE,
                    InitScheme::Glorot => (6.0 / ((h * d + hp.n_maps_conv * h) as f64)).sqrt(),
                };
                ConvGroup {
                    window: h,
                    kernels: shaped(vec![hp.n_maps_conv, h, d], uniform(&mut rng, n, range)),
                    bias: shaped(vec![hp.n_maps_conv], vec![0.0; hp.n_maps_conv]),
                }
            })
            .collect();
        let attn = if hp.use_attention {
            hp.attn_windows
                .iter()
                .map(|&w| AttnGroup {
                    window: w,
                    kernels: shaped(
                        vec![hp.n_maps_attn, w],
                        uniform(&mut rng, hp.n_maps_attn * w, AGCNN_INIT_RANGE),
                    ),
                    bias: shaped(vec![hp.n_maps_attn], vec![0.0; hp.n_maps_attn]),
                })
                .collect()
        } else {
            Vec::new()
        };
        let (c, m) = (hp.classes, hp.pooled_dim());
        let dense = match hp.init {
            InitScheme::Agcnn => uniform(&mut rng, c * m, AGCNN_INIT_RANGE),
            InitScheme::Glorot => vec![0.0; c * m],
        };
        Ok(AgcnnModel {
            hp: hp.clone(),
            embedding: shaped(vec![vocab_size, d], emb),
            conv,
            attn,
            dense_weight: shaped(vec![c, m], dense),
            dense_bias: shaped(vec![c], vec![0.0; c]),
            act_slope: Tensor::scalar(PRELU_INIT_SLOPE),
            gate_slope: Tensor::scalar(PRELU_INIT_SLOPE),
            vocab_hash: String::new(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    /// Replaces the embedding matrix, e.g. with pre-trained vectors.
    pub fn set_embedding(&mut self, matrix: Tensor) -> Result<(), ModelError> {
        let expected = vec![self.vocab_size(), self.hp.embedding_dim];
        if matrix.shape() != expected.as_slice() {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "set_embedding",
                left: expected,
                right: matrix.shape().to_vec(),
            }));
        }
        self.embedding = matrix;
        Ok(())
    }

    pub fn embedding_trainable(&self) -> bool {
        self.hp.embedding_mode == EmbeddingMode::Rand
    }

    /// Parameter names in canonical order.
    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    /// All parameters in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for g in &self.conv {
            out.push((format!("conv.h{}.kernels", g.window), &g.kernels));
            out.push((format!("conv.h{}.bias", g.window), &g.bias));
        }
        for g in &self.attn {
            out.push((format!("attn.w{}.kernels", g.window), &g.kernels));
            out.push((format!("attn.w{}.bias", g.window), &g.bias));
        }
        out.push(("dense.weight".to_string(), &self.dense_weight));
        out.push(("dense.bias".to_string(), &self.dense_bias));
        out.push(("act.prelu_slope".to_string(), &self.act_slope));
        out.push(("gate.prelu_slope".to_string(), &self.gate_slope));
        out
    }

    /// Mutable view of [`AgcnnModel::params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for g in &mut self.conv {
            out.push(&mut g.kernels);
            out.push(&mut g.bias);
        }
        for g in &mut self.attn {
            out.push(&mut g.kernels);
            out.push(&mut g.bias);
        }
        out.push(&mut self.dense_weight);
        out.push(&mut self.dense_bias);
        out.push(&mut self.act_slope);
        out.push(&mut self.gate_slope);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Sets attention kernels to zero and biases to the gate activation's
    /// preimage of 1, so the gate multiplies every feature by exactly 1.
    pub fn set_identity_gate(&mut self) -> Result<(), ModelError> {
        let kind = self.hp.gate_kind();
        let bias = kind.preimage_of_one().ok_or_else(|| {
            ModelError::Config(format!("gate activation {kind} cannot produce 1.0"))
        })?;
        for g in &mut self.attn {
            g.kernels.data_mut().fill(0.0);
            g.bias.data_mut().fill(bias);
        }
        Ok(())
    }

    /// Copy with every parameter rounded to f32, the checkpoint precision.
    pub fn to_f32_precision(&self) -> AgcnnModel {
        let mut out = self.clone();
        for t in out.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        out
    }

    /// Pushes every parameter except the embedding onto `tape` as borrowed
    /// leaves, with gradients when `grads` is set.
    pub fn register<'p>(&'p self, tape: &mut Tape<'p>, grads: bool) -> ParamVars {
        let conv = self
            .conv
            .iter()
            .map(|g| (tape.leaf_ref_with(&g.kernels, grads), tape.leaf_ref_with(&g.bias, grads)))
            .collect();
        let attn = self
            .attn
            .iter()
            .map(|g| (tape.leaf_ref_with(&g.kernels, grads), tape.leaf_ref_with(&g.bias, grads)))
            .collect();
        let act_grads = grads && self.hp.activation == ActivationKind::PRelu;
        let gate_grads = grads && self.hp.use_attention && self.hp.gate_kind() == ActivationKind::PRelu;
        ParamVars {
            conv,
            attn,
            dense_weight: tape.leaf_ref_with(&self.dense_weight, grads),
            dense_bias: tape.leaf_ref_with(&self.dense_bias, grads),
            act_slope: tape.leaf_ref_with(&self.act_slope, act_grads),
            gate_slope: tape.leaf_ref_with(&self.gate_slope, gate_grads),
        }
    }

    /// Gathers embedding rows for `ids`, right-padding with the padding index
    /// up to the widest first-layer window.
    pub fn embed(&self, ids: &[usize]) -> Result<(Vec<usize>, Tensor), ModelError> {
        let v = self.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(ModelError::TokenOutOfRange { id: bad, vocab: v });
        }
        let mut padded = ids.to_vec();
        if padded.len() < self.hp.min_len() {
            padded.resize(self.hp.min_len(), crate::data::PAD_INDEX);
        }
        let d = self.hp.embedding_dim;
        let mut rows = Vec::with_capacity(padded.len() * d);
        for &i in &padded {
            rows.extend_from_slice(self.embedding.row(i));
        }
        Ok((padded.clone(), Tensor::new(vec![padded.len(), d], rows)?))
    }

    /// Builds the graph from token ids to class logits.
    pub fn forward_graph<'p, R: Rng + ?Sized>(
        &'p self,
        tape: &mut Tape<'p>,
        vars: &ParamVars,
        ids: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<Forward, ModelError> {
        let (padded, rows) = self.embed(ids)?;
        let embedded = tape.leaf(rows.with_requires_grad(training && self.embedding_trainable()));
        let logits = self.logits_from_embedded(tape, vars, embedded, training, rng)?;
        Ok(Forward {
            logits,
            embedded,
            ids: padded,
        })
    }

    /// Graph from a gathered `[L × d]` sentence matrix to class logits.
    pub fn logits_from_embedded<'p, R: Rng + ?Sized>(
        &'p self,
        tape: &mut Tape<'p>,
        vars: &ParamVars,
        embedded: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let len = tape.shape(embedded)[0];
        if len < self.hp.min_len() {
            return Err(ModelError::SequenceTooShort {
                len,
                window: self.hp.min_len(),
            });
        }
        let mut pooled = Vec::with_capacity(vars.conv.len());
        for &(k, b) in &vars.conv {
            let maps = tape.conv1d_valid_bank(embedded, k, b)?;
            let act = apply_activation(tape, self.hp.activation, maps, vars.act_slope)?;
            let gated = if self.hp.use_attention {
                attention_gate(tape, act, &vars.attn, self.hp.gate_kind(), Some(vars.gate_slope))?
            } else {
                act
            };
            pooled.push(tape.max_pool_rows(gated)?);
        }
        let features = tape.concat(&pooled)?;
        let dropped = tape.dropout(features, self.hp.keep_rate, rng, training)?;
        Ok(tape.dense(dropped, vars.dense_weight, vars.dense_bias)?)
    }

    /// Class probabilities in inference mode (dropout off).
    pub fn forward(&self, ids: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = self.forward_graph(&mut tape, &vars, ids, false, &mut rng)?;
        let probs = tape.softmax(fwd.logits)?;
        Ok(tape.data(probs).to_vec())
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, ids: &[usize]) -> Result<usize, ModelError> {
        Ok(argmax(&self.forward(ids)?))
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Applies `kind`, routing PReLU through the learnable `slope` leaf.
pub fn apply_activation(
    tape: &mut Tape<'_>,
    kind: ActivationKind,
    x: Var,
    slope: Var,
) -> Result<Var, TensorError> {
    if kind == ActivationKind::PRelu {
        tape.prelu(x, slope)
    } else {
        tape.activate(kind, x)
    }
}

/// Gates feature maps `[n × L]` by the mean of the activated same-length
/// convolutions of every attention kernel: `maps ⊙ mean_k act(a_k * maps + b_k)`.
/// `groups` holds `(kernels [K × w], bias [K])` per attention window.
pub fn attention_gate(
    tape: &mut Tape<'_>,
    maps: Var,
    groups: &[(Var, Var)],
    kind: ActivationKind,
    prelu_slope: Option<Var>,
) -> Result<Var, TensorError> {
    if groups.is_empty() {
        return Ok(maps);
    }
    tape.attention_gate(maps, groups, kind, prelu_slope)
}
