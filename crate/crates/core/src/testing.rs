//! Finite-difference helpers shared by unit tests.

/// Central difference of `loss` with respect to the `f32` slot picked by
/// `slot`, divided by the perturbation actually realized in `f32`.
pub fn central_difference<M>(
    model: &mut M,
    eps: f32,
    slot: impl Fn(&mut M) -> &mut f32,
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let orig = *slot(model);
    let plus = orig + eps;
    let minus = orig - eps;
    *slot(model) = plus;
    let lp = loss(model);
    *slot(model) = minus;
    let lm = loss(model);
    *slot(model) = orig;
    (lp - lm) / (f64::from(plus) - f64::from(minus))
}

/// Relative error with a floor for gradients that are both essentially zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn assert_grad_close(analytic: f64, numeric: f64, what: &str) {
    let err = relative_error(analytic, numeric);
    assert!(
        err <= 1e-4,
        "{what}: analytic {analytic:e} vs numeric {numeric:e} (rel err {err:e})"
    );
}
