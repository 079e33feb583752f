//! Base learners and the handcrafted task losses used as meta-objectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationConfig;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Logistic {
        in_dim: usize,
        n_classes: usize,
    },
    Mlp {
        in_dim: usize,
        hidden: Vec<usize>,
        n_classes: usize,
    },
}

impl Arch {
    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Arch::Logistic { in_dim, n_classes } => vec![*in_dim, *n_classes],
            Arch::Mlp {
                in_dim,
                hidden,
                n_classes,
            } => {
                let mut d = vec![*in_dim];
                d.extend(hidden);
                d.push(*n_classes);
                d
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        self.dims()[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.dims().last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::Config(format!("all layer widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A base model `f_theta`: affine layers with a hidden activation in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub arch: Arch,
    pub hidden_activation: ActivationConfig,
    /// `[W1, b1, W2, b2, ...]` with `W` of shape `(fan_in, fan_out)`.
    pub params: Vec<Tensor>,
}

impl BaseModel {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(arch, &mut rng)
    }

    pub fn init_with<R: Rng>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let params = Self::draw_params(&arch, rng)?;
        Ok(BaseModel {
            arch,
            hidden_activation: ActivationConfig::relu(),
            params,
        })
    }

    fn draw_params<R: Rng>(arch: &Arch, rng: &mut R) -> Result<Vec<Tensor>> {
        let mut params = Vec::new();
        for w in arch.dims().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Tensor::matrix(fan_in, fan_out, data)?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(params)
    }

    /// Fresh parameters for the same architecture.
    pub fn reinit<R: Rng>(&self, rng: &mut R) -> Result<Vec<Tensor>> {
        Self::draw_params(&self.arch, rng)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.arch.in_dim() {
            return Err(Error::shape(
                "model_forward",
                format!("expected (batch, {}), got {:?}", self.arch.in_dim(), shape),
            ));
        }
        Ok(())
    }

    /// Records the forward pass with parameters `theta` (vars on `tape`).
    pub fn forward(&self, tape: &mut Tape, theta: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        if theta.len() != self.params.len() {
            return Err(Error::shape("model_forward", "wrong number of parameters"));
        }
        let batch = tape.value(x).shape()[0];
        let layers = theta.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, theta[2 * l])?;
            let b = tape.broadcast_rows(theta[2 * l + 1], batch)?;
            h = tape.add(z, b)?;
            if l + 1 < layers {
                h = self.hidden_activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }

    /// Off-tape forward pass with the model's own parameters.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_with(&self.params, x)
    }

    pub fn predict_with(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let layers = params.len() / 2;
        let mut h = x.clone();
        for l in 0..layers {
            h = h.matmul(&params[2 * l])?;
            let b = params[2 * l + 1].data();
            let width = b.len();
            let last = l + 1 == layers;
            for (i, v) in h.data_mut().iter_mut().enumerate() {
                let z = *v + b[i % width];
                *v = if last { z } else { self.hidden_activation.eval(z) };
            }
        }
        h.check_finite("model_forward")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    CrossEntropy,
    SquaredError,
}

fn check_one_hot(y: &Tensor) -> Result<()> {
    if y.rank() != 2 {
        return Err(Error::NotOneHot(format!("expected a matrix, got {:?}", y.shape())));
    }
    for i in 0..y.shape()[0] {
        let row = y.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros + 1 != row.len() {
            return Err(Error::NotOneHot(format!("row {i} is {row:?}")));
        }
    }
    Ok(())
}

impl TaskLoss {
    /// What the learned loss sees as the prediction channel: class
    /// probabilities for classification, raw outputs for regression.
    pub fn prediction_channels(self, tape: &mut Tape, outputs: Var) -> Result<Var> {
        match self {
            TaskLoss::CrossEntropy => tape.softmax_rows(outputs),
            TaskLoss::SquaredError => Ok(outputs),
        }
    }

    /// Batch-mean loss of `outputs` (logits or regression predictions) against `y`.
    pub fn forward(self, tape: &mut Tape, y: Var, outputs: Var) -> Result<Var> {
        let ys = tape.value(y).shape().to_vec();
        if ys != tape.value(outputs).shape() || ys.len() != 2 {
            return Err(Error::shape(
                "task_loss",
                format!("targets {:?} vs outputs {:?}", ys, tape.value(outputs).shape()),
            ));
        }
        match self {
            TaskLoss::CrossEntropy => {
                check_one_hot(tape.value(y))?;
                // mean_b lse(z_b - z_b,target), positive whenever the exponentials do not underflow
                let c = ys[1];
                let yz = tape.mul(y, outputs)?;
                let picked = tape.sum_axis(yz, 1)?;
                let picked = tape.expand(picked, 1, c)?;
                let shifted = tape.sub(outputs, picked)?;
                let per_row = tape.logsumexp(shifted, 1)?;
                tape.mean(per_row)
            }
            TaskLoss::SquaredError => {
                let d = tape.sub(y, outputs)?;
                let sq = tape.mul(d, d)?;
                tape.mean(sq)
            }
        }
    }

    /// Off-tape loss value.
    pub fn value(self, y: &Tensor, outputs: &Tensor) -> Result<f64> {
        if y.shape() != outputs.shape() || y.rank() != 2 {
            return Err(Error::shape(
                "task_loss",
                format!("targets {:?} vs outputs {:?}", y.shape(), outputs.shape()),
            ));
        }
        let n = y.shape()[0] as f64;
        match self {
            TaskLoss::CrossEntropy => {
                check_one_hot(y)?;
                let picked = y.mul(outputs)?.sum_axis(1)?.expand(1, y.shape()[1])?;
                let per_row = outputs.sub(&picked)?.logsumexp(1)?;
                Ok(per_row.data().iter().sum::<f64>() / n)
            }
            TaskLoss::SquaredError => {
                let d = y.sub(outputs)?;
                Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
            }
        }
    }
}

/// Fraction of rows whose arg-max prediction differs from the arg-max target.
pub fn error_rate(y: &Tensor, logits: &Tensor) -> Result<f64> {
    if y.shape() != logits.shape() || y.rank() != 2 || y.shape()[0] == 0 {
        return Err(Error::shape(
            "error_rate",
            format!("targets {:?} vs logits {:?}", y.shape(), logits.shape()),
        ));
    }
    let wrong = y
        .argmax_rows()
        .into_iter()
        .zip(logits.argmax_rows())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / y.shape()[0] as f64)
}
