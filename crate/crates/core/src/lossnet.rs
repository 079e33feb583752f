//! The learned loss: a small network applied to every (target, prediction)
//! channel pair, averaged over channels and instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationConfig;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_WIDTH: usize = 40;
const HIDDEN_LAYERS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNetMode {
    /// Smooth leaky ReLU hidden units, unconstrained (identity) output.
    Adalfl,
    /// ReLU hidden units and a Softplus output, which keeps the loss non-negative.
    Ml3Ablation,
}

impl LossNetMode {
    pub fn activations(self) -> (ActivationConfig, ActivationConfig) {
        match self {
            LossNetMode::Adalfl => (ActivationConfig::default(), ActivationConfig::identity()),
            LossNetMode::Ml3Ablation => (ActivationConfig::relu(), ActivationConfig::softplus(1.0)),
        }
    }
}

/// Anything that maps `(targets, predictions)` of shape `(batch, C)` to a
/// differentiable scalar loss, parameterized by a list of tensors.
pub trait LearnedLoss {
    fn params(&self) -> &[Tensor];

    fn forward(&self, tape: &mut Tape, params: &[Var], y: Var, pred: Var) -> Result<Var>;
}

/// The meta-learned loss `M_phi`: a 2 -> H -> H -> 1 network applied channel-wise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossNetwork {
    pub mode: LossNetMode,
    pub width: usize,
    pub hidden_activation: ActivationConfig,
    pub output_activation: ActivationConfig,
    /// `[W1 (2,H), b1 (H), W2 (H,H), b2 (H), W3 (H,1), b3 (1)]`
    params: Vec<Tensor>,
}

impl LossNetwork {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases, all drawn from `seed`.
    pub fn init(seed: u64, width: usize, mode: LossNetMode) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("loss network width must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [2, width, width, 1];
        debug_assert_eq!(dims.len(), HIDDEN_LAYERS + 2);
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Tensor::matrix(fan_in, fan_out, data)?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        let (hidden_activation, output_activation) = mode.activations();
        Ok(LossNetwork {
            mode,
            width,
            hidden_activation,
            output_activation,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Replaces all parameters; shapes must match the current ones.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::shape("set_params", "parameter shapes do not match"));
        }
        if params.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite { op: "set_params" });
        }
        self.params = params;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses a saved network and checks parameter shapes and activations.
    pub fn from_json(text: &str) -> Result<Self> {
        let saved: LossNetwork = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        saved.hidden_activation.validate()?;
        saved.output_activation.validate()?;
        let mut net = LossNetwork::init(0, saved.width, saved.mode)?;
        net.hidden_activation = saved.hidden_activation;
        net.output_activation = saved.output_activation;
        net.set_params(saved.params)?;
        Ok(net)
    }

    /// Places the parameters on `tape` and evaluates the loss on `(y, y_pred)`.
    pub fn loss_forward(&self, tape: &mut Tape, y: Var, y_pred: Var) -> Result<(Var, Vec<Var>)> {
        let phi = tape.leaves(&self.params);
        let loss = self.forward(tape, &phi, y, y_pred)?;
        Ok((loss, phi))
    }

    /// Per-pair loss `l_phi(y, f)` for rows of an `(n, 2)` matrix, off-tape.
    pub fn eval_pairs(&self, pairs: &Tensor) -> Result<Vec<f64>> {
        if pairs.rank() != 2 || pairs.shape()[1] != 2 {
            return Err(Error::shape(
                "eval_pairs",
                format!("expected (n, 2), got {:?}", pairs.shape()),
            ));
        }
        let mut h = pairs.clone();
        let layers = self.params.len() / 2;
        for l in 0..layers {
            let (w, b) = (&self.params[2 * l], &self.params[2 * l + 1]);
            h = h.matmul(w)?;
            let width = b.len();
            let act = if l + 1 == layers {
                self.output_activation
            } else {
                self.hidden_activation
            };
            for (i, v) in h.data_mut().iter_mut().enumerate() {
                *v = act.eval(*v + b.data()[i % width]);
            }
        }
        Ok(h.into_data())
    }

    /// `l_phi(y_fixed, f)` for every `f` in `grid`, in order.
    pub fn export_loss_surface(&self, y_fixed: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
        if grid.is_empty() {
            return Err(Error::Config("loss surface grid is empty".into()));
        }
        let pairs = Tensor::matrix(grid.len(), 2, grid.iter().flat_map(|&f| [y_fixed, f]).collect())?;
        let losses = self.eval_pairs(&pairs)?;
        Ok(grid.iter().copied().zip(losses).collect())
    }
}

impl LearnedLoss for LossNetwork {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn forward(&self, tape: &mut Tape, phi: &[Var], y: Var, pred: Var) -> Result<Var> {
        let shape = tape.value(y).shape().to_vec();
        if shape.len() != 2 || tape.value(pred).shape() != shape.as_slice() {
            return Err(Error::shape(
                "loss_forward",
                format!("targets {:?} vs predictions {:?}", shape, tape.value(pred).shape()),
            ));
        }
        if phi.len() != self.params.len() {
            return Err(Error::shape("loss_forward", "wrong number of loss parameters"));
        }
        let pairs_n = shape[0] * shape[1];
        if pairs_n == 0 {
            return Err(Error::shape("loss_forward", "empty batch"));
        }
        let yc = tape.reshape(y, &[pairs_n, 1])?;
        let pc = tape.reshape(pred, &[pairs_n, 1])?;
        let mut h = tape.concat_last(&[yc, pc])?;
        let layers = phi.len() / 2;
        for l in 0..layers {
            let z = tape.matmul(h, phi[2 * l])?;
            let bias = tape.broadcast_rows(phi[2 * l + 1], pairs_n)?;
            let z = tape.add(z, bias)?;
            let act = if l + 1 == layers {
                self.output_activation
            } else {
                self.hidden_activation
            };
            h = act.apply(tape, z)?;
        }
        // mean over channels, then over the batch: with equal channel counts
        // per row this is the mean of all pair losses
        tape.mean(h)
    }
}
