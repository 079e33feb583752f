//! Central finite differences and the comparison metrics used to check
//! analytic gradients against them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `p` with step `h`.
pub fn finite_diff_grad<F>(mut f: F, p: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = p.clone();
    let mut grad = Tensor::zeros_like(p);
    for i in 0..p.len() {
        let orig = p.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff_grad" });
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Coordinates smaller than this fraction of the largest coordinate of either
/// vector are compared against that scale instead of their own magnitude, so
/// finite-difference roundoff on near-zero entries does not dominate.
pub const REL_ERR_SCALE_FLOOR: f64 = 1e-3;
/// Denominator floor for vectors that are zero or nearly so.
pub const REL_ERR_ABS_FLOOR: f64 = 1e-12;

/// Largest coordinate-wise `|a - b| / max(|a|, |b|, s)` with
/// `s = max(REL_ERR_SCALE_FLOOR * max_j max(|a_j|, |b_j|), REL_ERR_ABS_FLOOR)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (REL_ERR_SCALE_FLOOR * scale).max(REL_ERR_ABS_FLOOR);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_abs_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Cosine of the angle between two flat vectors; 1 when both are zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Concatenates parameter tensors into one flat vector.
pub fn flatten(tensors: &[Tensor]) -> Tensor {
    Tensor::vector(tensors.iter().flat_map(|t| t.data().iter().copied()).collect())
}

/// Splits a flat vector back into tensors shaped like `like`.
pub fn unflatten(flat: &Tensor, like: &[Tensor]) -> Result<Vec<Tensor>> {
    let total: usize = like.iter().map(Tensor::len).sum();
    if total != flat.len() {
        return Err(Error::shape(
            "unflatten",
            format!("{} values for {} parameters", flat.len(), total),
        ));
    }
    let mut offset = 0;
    like.iter()
        .map(|t| {
            let chunk = flat.data()[offset..offset + t.len()].to_vec();
            offset += t.len();
            Tensor::new(t.shape().to_vec(), chunk)
        })
        .collect()
}
