use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::presets::{ablation_rung, preset_variant, ABLATION_RUNGS};
use super::SweepError;
use crate::autodiff::ActivationKind;
use crate::data::CorpusFormat;
use crate::model::HyperParams;

/// The single hyperparameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    ConvWindow,
    ConvWindowCombo,
    AttnWindow,
    AttnWindowCombo,
    NMapsConv,
    NMapsAttn,
    KeepRate,
    Activation,
    AblationRung,
    /// `"<baseline|proposed>/<activation>/<rand|static>"` configurations.
    PresetVariant,
}

impl Axis {
    pub const ALL: [Axis; 10] = [
        Axis::ConvWindow,
        Axis::ConvWindowCombo,
        Axis::AttnWindow,
        Axis::AttnWindowCombo,
        Axis::NMapsConv,
        Axis::NMapsAttn,
        Axis::KeepRate,
        Axis::Activation,
        Axis::AblationRung,
        Axis::PresetVariant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::ConvWindow => "conv_window",
            Axis::ConvWindowCombo => "conv_window_combo",
            Axis::AttnWindow => "attn_window",
            Axis::AttnWindowCombo => "attn_window_combo",
            Axis::NMapsConv => "n_maps_conv",
            Axis::NMapsAttn => "n_maps_attn",
            Axis::KeepRate => "keep_rate",
            Axis::Activation => "activation",
            Axis::AblationRung => "ablation_rung",
            Axis::PresetVariant => "preset_variant",
        }
    }

    pub fn is_window_combo(self) -> bool {
        matches!(self, Axis::ConvWindowCombo | Axis::AttnWindowCombo)
    }

    /// Setting of this axis in `hp`, in the same JSON form as sweep values.
    /// `None` for axes that name whole configurations.
    pub fn current(self, hp: &HyperParams) -> Option<Value> {
        let v = match self {
            Axis::ConvWindow if hp.conv_windows.len() == 1 => Value::from(hp.conv_windows[0]),
            Axis::AttnWindow if hp.attn_windows.len() == 1 => Value::from(hp.attn_windows[0]),
            Axis::ConvWindowCombo => Value::from(hp.conv_windows.clone()),
            Axis::AttnWindowCombo => Value::from(hp.attn_windows.clone()),
            Axis::NMapsConv => Value::from(hp.n_maps_conv),
            Axis::NMapsAttn => Value::from(hp.n_maps_attn),
            Axis::KeepRate => Value::from(hp.keep_rate),
            Axis::Activation => Value::from(hp.activation.name()),
            _ => return None,
        };
        Some(v)
    }

    /// `base` with this axis set to `value`, validated.
    pub fn apply(self, base: &HyperParams, value: &Value) -> Result<HyperParams, SweepError> {
        let bad = |reason: String| SweepError::InvalidValue {
            axis: self.name(),
            value: value.to_string(),
            reason,
        };
        let uint = || value.as_u64().map(|v| v as usize).ok_or_else(|| bad("expected a non-negative integer".into()));
        let list = || -> Result<Vec<usize>, SweepError> {
            serde_json::from_value::<Vec<usize>>(value.clone()).map_err(|_| bad("expected a list of window sizes".into()))
        };
        let name = || value.as_str().ok_or_else(|| bad("expected a string".into()));
        let mut hp = base.clone();
        match self {
            Axis::ConvWindow => hp.conv_windows = vec![uint()?],
            Axis::ConvWindowCombo => hp.conv_windows = list()?,
            Axis::AttnWindow => hp.attn_windows = vec![uint()?],
            Axis::AttnWindowCombo => hp.attn_windows = list()?,
            Axis::NMapsConv => hp.n_maps_conv = uint()?,
            Axis::NMapsAttn => hp.n_maps_attn = uint()?,
            Axis::KeepRate => hp.keep_rate = value.as_f64().ok_or_else(|| bad("expected a number".into()))?,
            Axis::Activation => {
                hp.activation = name()?.parse::<ActivationKind>().map_err(|e| bad(e.to_string()))?;
            }
            Axis::AblationRung => {
                let rung = name()?;
                hp = ablation_rung(base, rung)
                    .ok_or_else(|| bad(format!("unknown rung; expected one of {ABLATION_RUNGS:?}")))?;
            }
            Axis::PresetVariant => {
                hp = preset_variant(base, name()?)
                    .ok_or_else(|| bad("expected \"<baseline|proposed>/<activation>/<rand|static>\"".into()))?;
            }
        }
        hp.validate().map_err(|e| bad(e.to_string()))?;
        Ok(hp)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Human-readable form of a sweep value: lists as `(1,2,3)`, strings bare.
pub fn value_label(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(value_label).collect();
            format!("({})", inner.join(","))
        }
        other => other.to_string(),
    }
}

fn default_true() -> bool {
    true
}

/// One sweep: a baseline configuration, one axis and the values to try.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Corpus path, relative to the data directory when not absolute.
    pub corpus: String,
    #[serde(default)]
    pub corpus_format: CorpusFormat,
    /// Optional pre-trained vector file, resolved like `corpus`.
    #[serde(default)]
    pub embeddings: Option<String>,
    pub baseline: HyperParams,
    pub axis: Axis,
    pub values: Vec<Value>,
    /// Value whose row serves as the percent-change reference. Defaults to
    /// the row matching `baseline` (the first rung for the ablation ladder).
    #[serde(default)]
    pub baseline_value: Option<Value>,
    pub replications: usize,
    pub folds: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    /// Report path without extension, relative to the output directory.
    pub output: String,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self, SweepError> {
        serde_json::from_str(text).map_err(|e| SweepError::InvalidSpec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path).map_err(|e| SweepError::io(path, e))?;
        SweepSpec::from_json(&text)
    }

    /// Checks the spec and every value's configuration, before any training.
    pub fn validate(&self) -> Result<Vec<HyperParams>, SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::InvalidSpec("values must not be empty".into()));
        }
        if self.replications == 0 {
            return Err(SweepError::InvalidSpec("replications must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(SweepError::InvalidSpec(format!("folds must be >= 2, got {}", self.folds)));
        }
        self.baseline.validate()?;
        let configs = self
            .values
            .iter()
            .map(|v| self.axis.apply(&self.baseline, v))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(b) = &self.baseline_value {
            if !self.values.contains(b) {
                return Err(SweepError::InvalidSpec(format!("baseline_value {b} is not among the values")));
            }
        }
        Ok(configs)
    }

    /// Index of the row used as the percent-change reference, if any.
    pub fn baseline_index(&self, configs: &[HyperParams]) -> Option<usize> {
        if let Some(b) = &self.baseline_value {
            return self.values.iter().position(|v| v == b);
        }
        if self.axis == Axis::AblationRung {
            return Some(0);
        }
        configs.iter().position(|c| *c == self.baseline)
    }

    /// Resolves a spec path against `data_dir` when it is relative.
    pub fn resolve(path: &str, data_dir: Option<&Path>) -> PathBuf {
        let p = PathBuf::from(path);
        match data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        }
    }
}
