//! Spectral-norm estimation for adjoint pairs of linear operators.

use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Default power-iteration budget.
pub const POWER_ITERS: usize = 500;
/// Default relative-change tolerance for the eigenvalue estimate.
pub const POWER_TOL: f64 = 1e-8;

/// Largest eigenvalue of adjoint(apply(.)) by power iteration.
///
/// The estimate is deterministic: the start vector is drawn from a fixed
/// seed. Returns an error if the operator produces non-finite values.
pub fn spectral_norm_sq<A, T>(apply: A, apply_adjoint: T, dim: usize, iters: usize, tol: f64) -> Result<f64>
where
    A: Fn(&[f64]) -> Vec<f64>,
    T: Fn(&[f64]) -> Vec<f64>,
{
    if dim == 0 {
        return Err(Error::InvalidArgument("spectral_norm_sq needs dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..1.0)).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    // After the change-based stop fires, a few polish iterations shave the
    // residual bias of the stopping test itself.
    let mut polish_left: Option<usize> = None;
    for it in 0..iters.max(1) {
        let w = apply_adjoint(&apply(&v));
        if w.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "operator returned length {} for dim {dim}",
                w.len()
            )));
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("power iteration".into()));
        }
        if norm == 0.0 {
            // Start vector annihilated: operator is zero on its span.
            return Ok(0.0);
        }
        let prev = estimate;
        estimate = norm;
        v = w;
        normalize(&mut v);
        match polish_left {
            Some(0) => break,
            Some(k) => polish_left = Some(k - 1),
            None => {
                if it > 0 && (estimate - prev).abs() <= tol * estimate.max(1e-300) {
                    polish_left = Some(8);
                }
            }
        }
    }
    Ok(estimate)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}
