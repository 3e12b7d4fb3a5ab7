//! Element-wise activation functions with first and second derivatives.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
    /// `max(x, 0)`; derivatives at the kink are taken to be zero.
    Relu,
    /// `erf(x / sqrt(2))`, the Gaussian-friendly erf scaling.
    ErfScaled,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Identity,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Softplus,
        ActivationKind::Relu,
        ActivationKind::ErfScaled,
    ];

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Softplus => softplus(x),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::ErfScaled => libm::erf(x * FRAC_1_SQRT_2),
        }
    }

    /// Returns `(σ(x), σ'(x), σ''(x))`.
    #[inline]
    pub fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            ActivationKind::Identity => (x, 1.0, 0.0),
            ActivationKind::Tanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            ActivationKind::Softplus => {
                let s = sigmoid(x);
                let d = s * (1.0 - s);
                (softplus(x), s, d)
            }
            ActivationKind::Relu => {
                if x > 0.0 {
                    (x, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            ActivationKind::ErfScaled => {
                let d = (2.0 / PI).sqrt() * (-0.5 * x * x).exp();
                (libm::erf(x * FRAC_1_SQRT_2), d, -x * d)
            }
        }
    }

    /// Odd activations admit the `(w, a) -> (-w, -a)` symmetry in two-layer nets.
    pub fn is_odd(self) -> bool {
        matches!(
            self,
            ActivationKind::Identity | ActivationKind::Tanh | ActivationKind::ErfScaled
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Relu => "relu",
            ActivationKind::ErfScaled => "erf_scaled",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Spec-level entry point: `(σ(x), σ'(x), σ''(x))`.
pub fn activation_eval(kind: ActivationKind, x: f64) -> (f64, f64, f64) {
    kind.eval(x)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
