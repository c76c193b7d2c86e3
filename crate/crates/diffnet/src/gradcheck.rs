use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Errors are relative to `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Check at most this many evenly strided elements per parameter.
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            floor: 1e-3,
            max_per_param: None,
        }
    }
}

/// Compares the gradient of the scalar built by `loss` against central
/// finite differences, for every parameter in `params`.
///
/// A graph with no parameters passes vacuously with zero error.
pub fn grad_check<F>(params: &mut ParamSet, opts: GradCheckOptions, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(ps);
        let l = loss(&mut g)?;
        Ok(g.value(l)[0])
    };
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let stride = match opts.max_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for k in (0..n).step_by(stride) {
            let orig = params.get(id).values()[k];
            params.get_mut(id).values_mut()[k] = orig + opts.eps;
            let up = eval(params)?;
            params.get_mut(id).values_mut()[k] = orig - opts.eps;
            let down = eval(params)?;
            params.get_mut(id).values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let a = grad[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
