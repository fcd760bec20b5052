//! Central finite differences, used to verify the hand-written backward passes.

use alloc::vec::Vec;

/// Default perturbation for `f64` checks.
pub const STEP: f64 = 1e-5;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` with Euclidean norms.
///
/// The floor keeps all-zero gradients from dividing by zero; when both
/// vectors are below it the result is an absolute error scaled by `1/floor`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-8;
    let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum::<f64>());
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(FLOOR);
    diff / scale
}
