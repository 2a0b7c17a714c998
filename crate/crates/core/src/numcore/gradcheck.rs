//! Central finite-difference gradient checking.

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared absolutely instead of amplifying rounding noise.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
    pub max_rel_error: f64,
    /// Path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares backward-pass gradients of `build` against central differences
/// with step `h` for every coordinate of every parameter in `params`.
///
/// `build` receives a fresh tape and one bound leaf per parameter (indexed like
/// the store) and must return a scalar loss node.
pub fn grad_check<F>(params: &ParamStore, h: f64, tol: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Parameter(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut tape = Tape::new();
    let vars = tape.bind(params);
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?.param_buffer(&tape, params.len());

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.bind(store);
        let l = build(&mut t, &v)?;
        Ok(t.value(l).data()[0])
    };

    let mut probe = params.clone();
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    let mut coordinates = 0;
    for (id, p) in params.iter() {
        let base = p.value.to_vec();
        let shape = p.value.shape().to_vec();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            probe.set_value(id, Tensor::new(shape.clone(), plus)?)?;
            let fp = eval(&probe)?;
            let mut minus = base.clone();
            minus[i] -= h;
            probe.set_value(id, Tensor::new(shape.clone(), minus)?)?;
            let fm = eval(&probe)?;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g[i]);
            let rel = relative_error(analytic, numeric);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((p.path.clone(), i));
            }
            coordinates += 1;
        }
        probe.set_value(id, p.value.clone())?;
    }
    Ok(GradCheckReport { max_rel_error: max_rel, worst, coordinates, tol, passed: max_rel < tol })
}
