//! Explicit second-order predictions from two time levels.
//!
//! With `r = dt_n / dt_nm1` the predictions are linear extrapolations through
//! `(t_{n-1}, f_{n-1})` and `(t_n, f_n)`:
//! half step `(1 + r/2) f_n - (r/2) f_{n-1}`, full step `(1 + r) f_n - r f_{n-1}`.
//! Uniform steps give `3/2, -1/2` and `2, -1`.

use crate::spectral::RealField;

/// Weights `(w_n, w_nm1)` of the prediction at `t_n + dt_n / 2`.
pub fn half_weights(dt_n: f64, dt_nm1: f64) -> (f64, f64) {
    let r = dt_n / dt_nm1;
    (1.0 + 0.5 * r, -0.5 * r)
}

/// Weights `(w_n, w_nm1)` of the prediction at `t_n + dt_n`.
pub fn full_weights(dt_n: f64, dt_nm1: f64) -> (f64, f64) {
    let r = dt_n / dt_nm1;
    (1.0 + r, -r)
}

pub fn extrap_half(f_n: &RealField, f_nm1: &RealField, dt_n: f64, dt_nm1: f64) -> RealField {
    let (a, b) = half_weights(dt_n, dt_nm1);
    f_n.lin_comb(a, f_nm1, b)
}

pub fn extrap_full(f_n: &RealField, f_nm1: &RealField, dt_n: f64, dt_nm1: f64) -> RealField {
    let (a, b) = full_weights(dt_n, dt_nm1);
    f_n.lin_comb(a, f_nm1, b)
}
