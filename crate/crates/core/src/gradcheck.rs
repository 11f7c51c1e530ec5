//! Central finite differences, the reference every analytic gradient is checked against.

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Denominator floor for [`relative_error`].
///
/// Components whose analytic and numeric magnitudes are both below this are
/// compared on an absolute scale instead: the central-difference estimate
/// carries roughly `1e-16 · |f| / h` of rounding noise, which swamps tiny
/// gradients in a relative comparison.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element `i` of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest [`relative_error`] over all elements.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Outcome of checking one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    /// Largest element-wise [`relative_error`].
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, or the absolute
    /// norm when both gradients are below [`ZERO_GRADIENT_NORM`].
    pub norm_relative_error: f64,
}

/// Gradient norm below which a tensor counts as receiving no gradient.
pub const ZERO_GRADIENT_NORM: f64 = 1e-12;

/// Norm-wise relative error between two gradient tensors.
pub fn norm_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.norm().max(numeric.norm());
    if scale < ZERO_GRADIENT_NORM {
        diff
    } else {
        diff / scale
    }
}

/// Checks `analytic[i]` against central differences of `loss` for every
/// scalar of every tensor in `store`.
///
/// `loss` is evaluated on a copy of `store` with one element perturbed; the
/// copy is restored before the next probe.
pub fn check_params(
    store: &ParamStore,
    analytic: &[Tensor],
    mut loss: impl FnMut(&ParamStore) -> f64,
    h: f64,
) -> Vec<TensorCheck> {
    assert_eq!(analytic.len(), store.len(), "one analytic gradient per parameter");
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut numeric = Tensor::zeros(grad.shape().to_vec());
        for j in 0..grad.numel() {
            let orig = probe.values()[i].data()[j];
            probe.values_mut()[i].data_mut()[j] = orig + h;
            let plus = loss(&probe);
            probe.values_mut()[i].data_mut()[j] = orig - h;
            let minus = loss(&probe);
            probe.values_mut()[i].data_mut()[j] = orig;
            let n = (plus - minus) / (2.0 * h);
            numeric.data_mut()[j] = n;
            let a = grad.data()[j];
            max_rel = max_rel.max(relative_error(a, n));
            max_abs = max_abs.max((a - n).abs());
        }
        out.push(TensorCheck {
            name: store.names()[i].clone(),
            numel: grad.numel(),
            max_relative_error: max_rel,
            max_abs_error: max_abs,
            norm_relative_error: norm_relative_error(grad, &numeric),
        });
    }
    out
}
