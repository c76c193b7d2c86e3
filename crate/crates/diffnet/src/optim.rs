use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Plain SGD: `p -= lr * grad` for every parameter that received a gradient,
/// then clears all gradients.
///
/// The step is all-or-nothing: if any gradient is non-finite no parameter is
/// touched and the offending name is reported.
pub fn sgd_step(params: &mut ParamSet, lr: f64) -> Result<()> {
    for (name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
    }
    for (_, t) in params.iter_mut() {
        let Some(g) = t.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for (p, d) in t.values_mut().iter_mut().zip(&g) {
            *p -= lr * d;
        }
        t.clear_grad();
    }
    Ok(())
}

/// Scales every accumulated gradient so the global L2 norm is at most
/// `max_norm`. Returns the norm before scaling.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.grad().map(|g| g.iter().map(|v| v * s).collect::<Vec<_>>()) {
                t.clear_grad();
                t.accumulate_grad(&g);
            }
        }
    }
    norm
}
