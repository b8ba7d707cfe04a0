//! Batched affine layer kernels over flat parameter slices.
//!
//! A layer with `fan_in` inputs and `fan_out` outputs occupies
//! `fan_out * fan_in` weights (row-major, one row per output unit) followed by
//! `fan_out` biases.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

pub(crate) fn layer_len(fan_in: usize, fan_out: usize) -> usize {
    fan_out * fan_in + fan_out
}

pub(crate) fn weight(p: &[f64], fan_in: usize, fan_out: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((fan_out, fan_in), &p[..fan_out * fan_in]).unwrap()
}

pub(crate) fn bias(p: &[f64], fan_in: usize, fan_out: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[fan_out * fan_in..fan_out * fan_in + fan_out])
}

pub(crate) fn split_grad_mut(
    g: &mut [f64],
    fan_in: usize,
    fan_out: usize,
) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
    let (w, b) = g[..layer_len(fan_in, fan_out)].split_at_mut(fan_out * fan_in);
    (
        ArrayViewMut2::from_shape((fan_out, fan_in), w).unwrap(),
        ArrayViewMut1::from(b),
    )
}

/// `x · wᵀ + b`
pub(crate) fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    z += &b;
    z
}

/// Accumulates `dW += deltaᵀ · x` and `db += Σ_rows delta`.
pub(crate) fn accumulate_param_grad(
    x: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    mut gw: ArrayViewMut2<f64>,
    mut gb: ArrayViewMut1<f64>,
) {
    general_mat_mul(1.0, &delta.t(), &x, 1.0, &mut gw);
    gb += &delta.sum_axis(Axis(0));
}

pub(crate) fn relu_inplace(z: &mut Array2<f64>) {
    // NaN must propagate, so no f64::max
    z.mapv_inplace(|v| if v <= 0.0 { 0.0 } else { v });
}

/// Zeroes `delta` wherever the post-activation value was not positive.
pub(crate) fn relu_mask(delta: &mut Array2<f64>, activated: &Array2<f64>) {
    delta.zip_mut_with(activated, |d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
}

pub(crate) fn init_uniform_fan_in<R: rand::Rng + ?Sized>(
    p: &mut [f64],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in p[..layer_len(fan_in, fan_out)].iter_mut() {
        *v = rng.random_range(-bound..=bound);
    }
}
