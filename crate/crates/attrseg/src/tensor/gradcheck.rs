//! Central finite differences. Forward-only on purpose: this is the
//! independent oracle the analytic gradients are checked against.

use super::mat::Mat;

/// Numeric gradient of `f` at `x` by central differences with step `h`.
pub fn fd_grad(x: &Mat, mut f: impl FnMut(&Mat) -> f64, h: f64) -> Mat {
    let mut grad = Mat::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Largest element-wise relative error between two gradients. `floor`
/// guards the denominator so near-zero entries compare absolutely.
pub fn max_rel_err(analytic: &Mat, numeric: &Mat, floor: f64) -> f64 {
    assert_eq!(analytic.rows(), numeric.rows());
    assert_eq!(analytic.cols(), numeric.cols());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
