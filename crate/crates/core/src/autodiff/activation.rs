//! Elementwise activation functions and their derivatives.
//!
//! Kinked functions use the left derivative at the kink, so ReLU and NLReLU
//! report 0 at `x == 0` and the leaky variants report their negative slope.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TensorError;

/// Scale inside the logarithm of NLReLU: `ln(beta * max(0, x) + 1)`.
pub const NLRELU_BETA: f64 = 1.0;
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const ELU_ALPHA: f64 = 1.0;
pub const LRELU_SLOPE: f64 = 0.01;
/// Starting value of the learnable PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    #[serde(rename = "nlrelu")]
    NlRelu,
    Selu,
    Elu,
    #[serde(rename = "lrelu")]
    LRelu,
    #[serde(rename = "prelu")]
    PRelu,
    Sigmoid,
    Softplus,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 8] = [
        ActivationKind::Relu,
        ActivationKind::NlRelu,
        ActivationKind::Selu,
        ActivationKind::Elu,
        ActivationKind::LRelu,
        ActivationKind::PRelu,
        ActivationKind::Sigmoid,
        ActivationKind::Softplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::NlRelu => "nlrelu",
            ActivationKind::Selu => "selu",
            ActivationKind::Elu => "elu",
            ActivationKind::LRelu => "lrelu",
            ActivationKind::PRelu => "prelu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softplus => "softplus",
        }
    }

    /// Value at `x`. PReLU uses [`PRELU_INIT_SLOPE`]; a learnable slope goes
    /// through [`prelu`] instead.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::NlRelu => {
                if x > 0.0 {
                    (NLRELU_BETA * x).ln_1p()
                } else {
                    0.0
                }
            }
            ActivationKind::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            ActivationKind::Elu => {
                if x > 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
            ActivationKind::LRelu => prelu(x, LRELU_SLOPE),
            ActivationKind::PRelu => prelu(x, PRELU_INIT_SLOPE),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::NlRelu => {
                if x > 0.0 {
                    NLRELU_BETA / (NLRELU_BETA * x + 1.0)
                } else {
                    0.0
                }
            }
            ActivationKind::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            ActivationKind::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * x.exp()
                }
            }
            ActivationKind::LRelu => prelu_dx(x, LRELU_SLOPE),
            ActivationKind::PRelu => prelu_dx(x, PRELU_INIT_SLOPE),
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Softplus => sigmoid(x),
        }
    }

    /// `(apply(x), derivative(x))`, sharing the transcendental where possible.
    #[inline]
    pub fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            ActivationKind::Selu if x <= 0.0 => {
                let v = SELU_LAMBDA * SELU_ALPHA * x.exp_m1();
                (v, v + SELU_LAMBDA * SELU_ALPHA)
            }
            ActivationKind::Elu if x <= 0.0 => {
                let v = ELU_ALPHA * x.exp_m1();
                (v, v + ELU_ALPHA)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            _ => (self.apply(x), self.derivative(x)),
        }
    }

    /// Points where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            ActivationKind::Relu
            | ActivationKind::NlRelu
            | ActivationKind::Selu
            | ActivationKind::LRelu
            | ActivationKind::PRelu => &[0.0],
            ActivationKind::Elu | ActivationKind::Sigmoid | ActivationKind::Softplus => &[],
        }
    }

    /// Pre-activation value whose image is exactly (or as close as f64 allows
    /// to) 1.0; `None` when 1.0 is outside the range.
    pub fn preimage_of_one(self) -> Option<f64> {
        match self {
            ActivationKind::Relu
            | ActivationKind::Elu
            | ActivationKind::LRelu
            | ActivationKind::PRelu => Some(1.0),
            ActivationKind::NlRelu => Some((std::f64::consts::E - 1.0) / NLRELU_BETA),
            ActivationKind::Selu => Some(1.0 / SELU_LAMBDA),
            ActivationKind::Softplus => Some(1.0_f64.exp_m1().ln()),
            ActivationKind::Sigmoid => None,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn prelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn prelu_dx(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| TensorError::UnknownActivation(s.to_string()))
    }
}
