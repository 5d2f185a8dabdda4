//! Central finite differences, used to validate tape gradients.

use super::Tensor;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn numeric_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
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

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both norms are below `1e-10`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error shape mismatch");
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.l2_norm().max(b.l2_norm());
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}
