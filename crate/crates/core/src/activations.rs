//! Activation functions: the smooth leaky ReLU used inside the learned loss,
//! plus ReLU, leaky ReLU and Softplus for the flat-loss ablation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    SmoothLeakyRelu,
    Relu,
    LeakyRelu,
    Softplus,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationConfig {
    pub kind: ActivationKind,
    /// Leak: slope of the negative half.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Smoothness: larger values approach the piecewise-linear shape.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_BETA: f64 = 10.0;

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig::smooth_leaky_relu(DEFAULT_GAMMA, DEFAULT_BETA)
    }
}

impl ActivationConfig {
    pub fn new(kind: ActivationKind) -> Self {
        ActivationConfig {
            kind,
            gamma: DEFAULT_GAMMA,
            beta: DEFAULT_BETA,
        }
    }

    pub fn smooth_leaky_relu(gamma: f64, beta: f64) -> Self {
        ActivationConfig {
            kind: ActivationKind::SmoothLeakyRelu,
            gamma,
            beta,
        }
    }

    pub fn relu() -> Self {
        ActivationConfig::new(ActivationKind::Relu)
    }

    pub fn identity() -> Self {
        ActivationConfig::new(ActivationKind::Identity)
    }

    /// Softplus with the given sharpness.
    pub fn softplus(beta: f64) -> Self {
        ActivationConfig {
            kind: ActivationKind::Softplus,
            gamma: DEFAULT_GAMMA,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::Config(format!("activation beta must be > 0, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "activation gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Scalar evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::SmoothLeakyRelu => smooth_leaky_relu(x, self),
            ActivationKind::Relu => relu(x),
            ActivationKind::LeakyRelu => leaky_relu(x, self.gamma),
            ActivationKind::Softplus => softplus(x, self.beta),
            ActivationKind::Identity => x,
        }
    }

    /// Applies the activation element-wise on the tape.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.kind {
            ActivationKind::Identity => Ok(x),
            ActivationKind::Relu => tape.max_const(x, 0.0),
            ActivationKind::Softplus => tape.softplus(x, self.beta),
            ActivationKind::LeakyRelu => {
                let r = tape.max_const(x, 0.0)?;
                self.blend(tape, r, x)
            }
            ActivationKind::SmoothLeakyRelu => {
                let s = tape.softplus(x, self.beta)?;
                self.blend(tape, s, x)
            }
        }
    }

    // (1 - gamma) * rectified + gamma * x
    fn blend(&self, tape: &mut Tape, rectified: Var, x: Var) -> Result<Var> {
        let a = tape.scale(rectified, 1.0 - self.gamma)?;
        let b = tape.scale(x, self.gamma)?;
        tape.add(a, b)
    }
}

/// `ln(1 + e^{beta x}) / beta` without overflow.
pub use crate::autodiff::softplus;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky_relu(x: f64, gamma: f64) -> f64 {
    (gamma * x).max(x)
}

/// `softplus_beta(x) * (1 - gamma) + gamma * x`.
pub fn smooth_leaky_relu(x: f64, cfg: &ActivationConfig) -> f64 {
    softplus(x, cfg.beta) * (1.0 - cfg.gamma) + cfg.gamma * x
}

/// `(e^{beta x} + gamma) / (e^{beta x} + 1)`, evaluated as `gamma + (1 - gamma) sigmoid(beta x)`.
pub fn smooth_leaky_relu_deriv(x: f64, cfg: &ActivationConfig) -> f64 {
    cfg.gamma + (1.0 - cfg.gamma) * sigmoid(cfg.beta * x)
}

/// `(f'(x) - gamma, 1 - f'(x))` for the smooth leaky ReLU, computed without
/// cancellation so that both stay positive where `f'(x)` itself rounds to a bound.
pub fn smooth_leaky_relu_deriv_gaps(x: f64, cfg: &ActivationConfig) -> (f64, f64) {
    let z = cfg.beta * x;
    ((1.0 - cfg.gamma) * sigmoid(z), (1.0 - cfg.gamma) * sigmoid(-z))
}
