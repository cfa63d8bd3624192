use crate::autodiff::ActivationKind;
use crate::model::{EmbeddingMode, HyperParams, InitScheme};

/// Single-window reference configuration: windows (3), 100 feature maps, one
/// attention kernel of window 3, keep rate 0.5.
pub fn preset_baseline(activation: ActivationKind) -> HyperParams {
    HyperParams {
        conv_windows: vec![3],
        n_maps_conv: 100,
        attn_windows: vec![3],
        n_maps_attn: 1,
        keep_rate: 0.5,
        activation,
        gate_activation: None,
        use_attention: true,
        init: InitScheme::Agcnn,
        ..HyperParams::default()
    }
}

/// Tuned configuration: windows (1,2,3,4,5) with 200 maps each, attention
/// windows (1,3,5,7) with 10 kernels each, keep rate 0.5.
pub fn preset_proposed(activation: ActivationKind) -> HyperParams {
    HyperParams {
        conv_windows: vec![1, 2, 3, 4, 5],
        n_maps_conv: 200,
        attn_windows: vec![1, 3, 5, 7],
        n_maps_attn: 10,
        ..preset_baseline(activation)
    }
}

/// Rungs of the ablation ladder, in order.
pub const ABLATION_RUNGS: [&str; 5] = ["cnn-static-a", "cnn-static-b", "agcnn-relu", "agcnn-nlrelu", "agcnn-selu"];

/// Labelled consecutive comparisons reported by the ablation ladder.
pub const ABLATION_DELTAS: [(&str, &str, &str); 4] = [
    ("cnn-static-a", "cnn-static-b", "initialization contribution"),
    ("cnn-static-b", "agcnn-relu", "attention-gated layer contribution"),
    ("agcnn-relu", "agcnn-nlrelu", "NLReLU activation contribution"),
    ("agcnn-relu", "agcnn-selu", "SELU activation contribution"),
];

/// Configuration of one ablation rung derived from `base`.
pub fn ablation_rung(base: &HyperParams, rung: &str) -> Option<HyperParams> {
    let mut hp = base.clone();
    hp.gate_activation = None;
    match rung {
        "cnn-static-a" => {
            hp.use_attention = false;
            hp.activation = ActivationKind::Relu;
            hp.init = InitScheme::Glorot;
        }
        "cnn-static-b" => {
            hp.use_attention = false;
            hp.activation = ActivationKind::Relu;
            hp.init = InitScheme::Agcnn;
        }
        "agcnn-relu" | "agcnn-nlrelu" | "agcnn-selu" => {
            hp.use_attention = true;
            hp.init = InitScheme::Agcnn;
            hp.activation = rung["agcnn-".len()..].parse().ok()?;
        }
        _ => return None,
    }
    Some(hp)
}

/// Configuration named `"<preset>/<activation>/<embedding mode>"`, e.g.
/// `"proposed/selu/rand"`. Every other field comes from `base`.
pub fn preset_variant(base: &HyperParams, name: &str) -> Option<HyperParams> {
    let mut parts = name.split('/');
    let (preset, act, mode) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let activation: ActivationKind = act.parse().ok()?;
    let shape = match preset {
        "baseline" => preset_baseline(activation),
        "proposed" => preset_proposed(activation),
        _ => return None,
    };
    let embedding_mode = match mode {
        "rand" => EmbeddingMode::Rand,
        "static" => EmbeddingMode::Static,
        _ => return None,
    };
    Some(HyperParams {
        conv_windows: shape.conv_windows,
        n_maps_conv: shape.n_maps_conv,
        attn_windows: shape.attn_windows,
        n_maps_attn: shape.n_maps_attn,
        keep_rate: shape.keep_rate,
        activation,
        gate_activation: None,
        use_attention: true,
        init: InitScheme::Agcnn,
        embedding_mode,
        ..base.clone()
    })
}
