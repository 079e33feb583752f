//! SGD (with optional momentum, Nesterov and L2 weight decay) for base
//! parameters and Adam for loss-network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub alpha: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            alpha: 0.01,
            momentum: 0.0,
            nesterov: false,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn plain(alpha: f64) -> Self {
        SgdConfig {
            alpha,
            ..SgdConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // alpha = 0 is allowed: it is the degenerate case used to check that
        // the meta-gradient vanishes
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!("sgd alpha must be >= 0, got {}", self.alpha)));
        }
        if [self.momentum, self.weight_decay]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(Error::Config("sgd momentum and weight decay must be >= 0".into()));
        }
        Ok(())
    }

    /// True when the realized update is exactly `theta - alpha * g`.
    pub fn is_plain(&self) -> bool {
        self.momentum == 0.0 && self.weight_decay == 0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SgdState {
    buffers: Vec<Option<Tensor>>,
}

fn check_shapes(op: &'static str, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
        return Err(Error::shape(op, "parameter and gradient shapes differ"));
    }
    Ok(())
}

/// One SGD update in place: `g += wd * theta`, then momentum, then `theta -= alpha * v`.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], cfg: &SgdConfig, state: &mut SgdState) -> Result<()> {
    check_shapes("sgd_step", params, grads)?;
    if state.buffers.is_empty() {
        state.buffers = vec![None; params.len()];
    } else if state.buffers.len() != params.len() {
        return Err(Error::shape("sgd_step", "momentum state does not match parameters"));
    }
    let mut updated = Vec::with_capacity(params.len());
    for ((p, g), buf) in params.iter().zip(grads).zip(state.buffers.iter_mut()) {
        let mut d = if cfg.weight_decay != 0.0 {
            g.zip_map(p, "sgd_step", |g, p| g + cfg.weight_decay * p)?
        } else {
            g.clone()
        };
        if cfg.momentum != 0.0 {
            let v = match buf.take() {
                None => d.clone(),
                Some(b) => b.zip_map(&d, "sgd_step", |b, d| cfg.momentum * b + d)?,
            };
            d = if cfg.nesterov {
                d.zip_map(&v, "sgd_step", |d, v| d + cfg.momentum * v)?
            } else {
                v.clone()
            };
            *buf = Some(v);
        }
        let next = p.zip_map(&d, "sgd_step", |p, d| p - cfg.alpha * d)?;
        updated.push(next.check_finite("sgd_step")?);
    }
    params.iter_mut().zip(updated).for_each(|(p, n)| *p = n);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_eta(eta: f64) -> Self {
        AdamConfig {
            eta,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        // eta = 0 freezes the parameters; used for the degenerate-rate comparison
        if self.eta.is_nan() || self.eta < 0.0 || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("adam eta must be >= 0 and epsilon > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: u64,
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], cfg: &AdamConfig, state: &mut AdamState) -> Result<()> {
    check_shapes("adam_step", params, grads)?;
    if state.m.is_empty() {
        state.m = params.iter().map(Tensor::zeros_like).collect();
        state.v = params.iter().map(Tensor::zeros_like).collect();
    } else if state.m.len() != params.len() {
        return Err(Error::shape("adam_step", "moment state does not match parameters"));
    }
    let t = state.step + 1;
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut next_m = Vec::with_capacity(params.len());
    let mut next_v = Vec::with_capacity(params.len());
    let mut next_p = Vec::with_capacity(params.len());
    for (((p, g), m), v) in params.iter().zip(grads).zip(&state.m).zip(&state.v) {
        let m = m.zip_map(g, "adam_step", |m, g| cfg.beta1 * m + (1.0 - cfg.beta1) * g)?;
        let v = v.zip_map(g, "adam_step", |v, g| cfg.beta2 * v + (1.0 - cfg.beta2) * g * g)?;
        if !m.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite { op: "adam_step" });
        }
        let mut np = p.clone();
        for ((x, &mi), &vi) in np.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            *x -= cfg.eta * (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon);
        }
        next_p.push(np.check_finite("adam_step")?);
        next_m.push(m);
        next_v.push(v);
    }
    params.iter_mut().zip(next_p).for_each(|(p, n)| *p = n);
    state.m = next_m;
    state.v = next_v;
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::zeros(&[2])];
        sgd_step(&mut p, &g, &SgdConfig::plain(0.1), &mut SgdState::default()).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn plain_step() {
        let mut p = one(1.0);
        sgd_step(&mut p, &one(0.5), &SgdConfig::plain(0.1), &mut SgdState::default()).unwrap();
        assert!((p[0].item() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn plain_step_is_bitwise_eq1() {
        let theta = Tensor::vector(vec![0.123456789, -3.3, 7.0e-5]);
        let g = Tensor::vector(vec![1.1e-3, 0.77, -42.0]);
        let mut p = vec![theta.clone()];
        sgd_step(
            &mut p,
            std::slice::from_ref(&g),
            &SgdConfig::plain(0.01),
            &mut SgdState::default(),
        )
        .unwrap();
        let expect: Vec<f64> = theta.data().iter().zip(g.data()).map(|(t, g)| t - 0.01 * g).collect();
        assert_eq!(p[0].data(), expect.as_slice());
    }

    #[test]
    fn momentum_recurrence() {
        let cfg = SgdConfig {
            alpha: 0.1,
            momentum: 0.9,
            ..SgdConfig::default()
        };
        let mut state = SgdState::default();
        let mut p = one(0.0);
        sgd_step(&mut p, &one(1.0), &cfg, &mut state).unwrap();
        assert!((p[0].item() + 0.1).abs() < 1e-15);
        sgd_step(&mut p, &one(1.0), &cfg, &mut state).unwrap();
        assert!((p[0].item() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn nesterov_and_weight_decay() {
        let cfg = SgdConfig {
            alpha: 0.1,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 0.5,
        };
        let mut state = SgdState::default();
        let mut p = one(2.0);
        // d = 1 + 0.5*2 = 2; v = 2; step = d + 0.9 v = 3.8
        sgd_step(&mut p, &one(1.0), &cfg, &mut state).unwrap();
        assert!((p[0].item() - (2.0 - 0.38)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(sgd_step(
            &mut p,
            &[Tensor::zeros(&[3])],
            &SgdConfig::default(),
            &mut SgdState::default()
        )
        .is_err());
        assert!(adam_step(
            &mut p,
            &[Tensor::zeros(&[3])],
            &AdamConfig::default(),
            &mut AdamState::default()
        )
        .is_err());
    }

    #[test]
    fn adam_first_step_moves_by_eta() {
        let cfg = AdamConfig::with_eta(1e-3);
        for scale in [1.0, 10.0] {
            let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
            let g = vec![Tensor::vector(vec![0.3 * scale, -2.0 * scale])];
            let mut st = AdamState::default();
            adam_step(&mut p, &g, &cfg, &mut st).unwrap();
            assert!((p[0].data()[0] + 1e-3).abs() < 1e-10);
            assert!((p[0].data()[1] - 1e-3).abs() < 1e-10);
            assert_eq!(st.step, 1);
        }
    }

    #[test]
    fn adam_zero_gradient_forever() {
        let cfg = AdamConfig::default();
        let mut p = vec![Tensor::vector(vec![0.5, -0.25])];
        let mut st = AdamState::default();
        for _ in 0..50 {
            adam_step(&mut p, &[Tensor::zeros(&[2])], &cfg, &mut st).unwrap();
        }
        assert_eq!(p[0].data(), &[0.5, -0.25]);
    }

    #[test]
    fn adam_zero_eta_is_identity() {
        let cfg = AdamConfig::with_eta(0.0);
        let mut p = vec![Tensor::vector(vec![0.5, -0.25])];
        let mut st = AdamState::default();
        adam_step(&mut p, &[Tensor::vector(vec![3.0, 1.0])], &cfg, &mut st).unwrap();
        assert_eq!(p[0].data(), &[0.5, -0.25]);
    }

    #[test]
    fn non_finite_update_rejected() {
        let mut p = one(1.0);
        let err = sgd_step(
            &mut p,
            &one(f64::MAX),
            &SgdConfig::plain(-10.0),
            &mut SgdState::default(),
        );
        assert!(err.is_err());
        assert_eq!(p[0].item(), 1.0);
    }
}
