use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::ActivationKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Randomly initialized, trained with the network.
    Rand,
    /// Installed from pre-trained vectors and frozen.
    #[default]
    Static,
}

/// Parameter initialization family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Uniform `[-0.05, 0.05]` kernels and dense weights, zero biases.
    #[default]
    Agcnn,
    /// Glorot-uniform kernels and a zero dense layer, as in the classic
    /// single-layer text CNN.
    Glorot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Row-wise L2 cap on the dense weights, applied after every update.
    pub max_norm: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 50,
            epochs: 25,
            max_norm: None,
        }
    }
}

/// Full configuration of one network and its training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// First-layer window sizes, strictly increasing.
    pub conv_windows: Vec<usize>,
    /// Kernels per first-layer window size.
    pub n_maps_conv: usize,
    /// Attention-layer window sizes, strictly increasing.
    pub attn_windows: Vec<usize>,
    /// Attention kernels per attention window size.
    pub n_maps_attn: usize,
    pub keep_rate: f64,
    pub activation: ActivationKind,
    /// Gate nonlinearity; `None` reuses `activation`.
    pub gate_activation: Option<ActivationKind>,
    /// `false` drops the attention-gated layer (plain text CNN).
    pub use_attention: bool,
    pub init: InitScheme,
    pub embedding_mode: EmbeddingMode,
    pub embedding_dim: usize,
    pub classes: usize,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            conv_windows: vec![3],
            n_maps_conv: 100,
            attn_windows: vec![3],
            n_maps_attn: 1,
            keep_rate: 0.5,
            activation: ActivationKind::NlRelu,
            gate_activation: None,
            use_attention: true,
            init: InitScheme::Agcnn,
            embedding_mode: EmbeddingMode::Static,
            embedding_dim: 300,
            classes: 2,
            optimizer: OptimizerSettings::default(),
            seed: 0,
        }
    }
}

fn check_windows(name: &str, windows: &[usize]) -> Result<(), ModelError> {
    if windows.is_empty() {
        return Err(ModelError::Config(format!("{name} must not be empty")));
    }
    if windows.contains(&0) {
        return Err(ModelError::Config(format!("{name} {windows:?}: window sizes must be >= 1")));
    }
    if windows.windows(2).any(|p| p[0] >= p[1]) {
        return Err(ModelError::Config(format!(
            "{name} {windows:?}: window sizes must be strictly increasing"
        )));
    }
    Ok(())
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_windows("conv_windows", &self.conv_windows)?;
        check_windows("attn_windows", &self.attn_windows)?;
        let cfg = |msg: String| Err(ModelError::Config(msg));
        if self.n_maps_conv == 0 {
            return cfg("n_maps_conv must be >= 1".into());
        }
        if self.n_maps_attn == 0 {
            return cfg("n_maps_attn must be >= 1".into());
        }
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return cfg(format!("keep_rate {} outside (0, 1]", self.keep_rate));
        }
        if self.classes < 2 {
            return cfg(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.embedding_dim == 0 {
            return cfg("embedding_dim must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return cfg(format!("learning_rate {} must be finite and >= 0", o.learning_rate));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return cfg(format!("Adam betas ({}, {}) must lie in [0, 1)", o.beta1, o.beta2));
        }
        if !(o.epsilon > 0.0) {
            return cfg(format!("epsilon {} must be positive", o.epsilon));
        }
        if o.batch_size == 0 {
            return cfg("batch_size must be >= 1".into());
        }
        if let Some(c) = o.max_norm {
            if !(c > 0.0) {
                return cfg(format!("max_norm {c} must be positive"));
            }
        }
        Ok(())
    }

    /// Width of the pooled feature vector: one entry per first-layer kernel.
    pub fn pooled_dim(&self) -> usize {
        self.conv_windows.len() * self.n_maps_conv
    }

    pub fn gate_kind(&self) -> ActivationKind {
        self.gate_activation.unwrap_or(self.activation)
    }

    /// Shortest token sequence the first layer accepts.
    pub fn min_len(&self) -> usize {
        self.conv_windows.iter().copied().max().unwrap_or(1)
    }

    /// Compact single-line description used in error messages and reports.
    pub fn summary(&self) -> String {
        format!(
            "conv={:?}x{} attn={} act={} gate={} keep={} emb={:?}/{} lr={}",
            self.conv_windows,
            self.n_maps_conv,
            if self.use_attention {
                format!("{:?}x{}", self.attn_windows, self.n_maps_attn)
            } else {
                "off".to_string()
            },
            self.activation,
            self.gate_kind(),
            self.keep_rate,
            self.embedding_mode,
            self.embedding_dim,
            self.optimizer.learning_rate,
        )
    }
}
