use super::ks::KsIntegrator;
use super::{Grid, PdeSpec};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Simulations abort once any |u| exceeds this.
pub const BLOW_UP_LIMIT: f64 = 1e6;

/// Real-axis extent of the classical RK4 stability region.
const RK4_STABILITY: f64 = 2.785;
const SAFETY: f64 = 0.5;
/// Maximum `h · k_max · max|u|` for the explicit part of ETDRK4.
const KS_COURANT: f64 = 0.5;

#[derive(Clone, Debug, Default)]
pub struct SolverOptions {
    /// Fixed number of internal steps per save interval; `None` picks the
    /// smallest count that satisfies the stability bound.
    pub substeps: Option<usize>,
}

/// Time derivative `du/dt` of the semi-discretized equation.
pub fn rhs(spec: &PdeSpec, u: &Tensor, grid: &Grid) -> Result<Tensor> {
    check_state(u, grid)?;
    let mut out = vec![0.0; grid.n];
    match spec {
        PdeSpec::Ks { nonlinear } => KsIntegrator::new(grid, 1.0, *nonlinear)?.rhs(u.data(), &mut out)?,
        _ => fd_rhs(spec, u.data(), grid.dx(), &mut out),
    }
    Tensor::vector(out)
}

fn check_state(u: &Tensor, grid: &Grid) -> Result<()> {
    if u.shape() != [grid.n] {
        return Err(Error::dim("pde state", u.shape(), &[grid.n]));
    }
    if let Some(index) = u.first_non_finite() {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// Central-difference right-hand side for Fisher and Burgers.
fn fd_rhs(spec: &PdeSpec, u: &[f64], dx: f64, out: &mut [f64]) {
    let n = u.len();
    let inv_dx2 = 1.0 / (dx * dx);
    let inv_2dx = 0.5 / dx;
    match *spec {
        PdeSpec::Fisher { alpha, beta } => {
            for i in 0..n {
                let (l, r) = (u[(i + n - 1) % n], u[(i + 1) % n]);
                out[i] = alpha * (l - 2.0 * u[i] + r) * inv_dx2 + beta * u[i] * (1.0 - u[i]);
            }
        }
        PdeSpec::Burgers { advection, viscosity } => {
            for i in 0..n {
                let (l, r) = (u[(i + n - 1) % n], u[(i + 1) % n]);
                out[i] = viscosity * (l - 2.0 * u[i] + r) * inv_dx2 - advection * u[i] * (r - l) * inv_2dx;
            }
        }
        PdeSpec::Ks { .. } => unreachable!("KS uses the spectral path"),
    }
}

/// Spectral-radius estimate of the semi-discrete Jacobian at amplitude `umax`.
fn fd_stiffness(spec: &PdeSpec, dx: f64, umax: f64) -> f64 {
    match *spec {
        PdeSpec::Fisher { alpha, beta } => 4.0 * alpha / (dx * dx) + beta * (1.0 + 2.0 * umax),
        PdeSpec::Burgers { advection, viscosity } => 4.0 * viscosity / (dx * dx) + advection.abs() * umax / dx,
        PdeSpec::Ks { .. } => 0.0,
    }
}

fn rk4_step(spec: &PdeSpec, u: &mut [f64], h: f64, dx: f64, work: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = work;
    fd_rhs(spec, u, dx, k1);
    for i in 0..u.len() {
        tmp[i] = u[i] + 0.5 * h * k1[i];
    }
    fd_rhs(spec, tmp, dx, k2);
    for i in 0..u.len() {
        tmp[i] = u[i] + 0.5 * h * k2[i];
    }
    fd_rhs(spec, tmp, dx, k3);
    for i in 0..u.len() {
        tmp[i] = u[i] + h * k3[i];
    }
    fd_rhs(spec, tmp, dx, k4);
    for i in 0..u.len() {
        u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// States at `t = 0, dt_save, …, (steps−1)·dt_save` as a `[steps×n]` tensor.
pub fn simulate(spec: &PdeSpec, ic: &Tensor, grid: &Grid, steps: usize, dt_save: f64) -> Result<Tensor> {
    simulate_with(spec, ic, grid, steps, dt_save, &SolverOptions::default())
}

pub fn simulate_with(
    spec: &PdeSpec,
    ic: &Tensor,
    grid: &Grid,
    steps: usize,
    dt_save: f64,
    options: &SolverOptions,
) -> Result<Tensor> {
    spec.validate()?;
    check_state(ic, grid)?;
    if steps < 2 {
        return Err(Error::Parameter(format!("need at least 2 saved states, got {steps}")));
    }
    if !(dt_save > 0.0) || !dt_save.is_finite() {
        return Err(Error::Parameter(format!("save interval must be > 0, got {dt_save}")));
    }
    if options.substeps == Some(0) {
        return Err(Error::Parameter("substeps must be ≥ 1".into()));
    }
    let n = grid.n;
    let dx = grid.dx();
    let mut out = Vec::with_capacity(steps * n);
    out.extend_from_slice(ic.data());
    let mut u = ic.to_vec();

    let mut ks = match spec {
        PdeSpec::Ks { nonlinear } => Some((KsIntegrator::new(grid, dt_save, *nonlinear)?, *nonlinear)),
        _ => None,
    };
    let mut work: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);

    for s in 1..steps {
        let umax = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        match ks.as_mut() {
            Some((integ, nonlinear)) => {
                let m = options.substeps.unwrap_or_else(|| {
                    if *nonlinear {
                        let kmax = std::f64::consts::PI / dx;
                        ((dt_save * kmax * umax / KS_COURANT).ceil() as usize).max(1)
                    } else {
                        1
                    }
                });
                integ.set_step(dt_save / m as f64)?;
                integ.advance(&mut u, m)?;
            }
            None => {
                let m = options.substeps.unwrap_or_else(|| {
                    let lambda = fd_stiffness(spec, dx, umax);
                    ((dt_save * lambda / (SAFETY * RK4_STABILITY)).ceil() as usize).max(1)
                });
                let h = dt_save / m as f64;
                for _ in 0..m {
                    rk4_step(spec, &mut u, h, dx, &mut work);
                }
            }
        }
        let t = s as f64 * dt_save;
        if u.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT) {
            return Err(Error::BlowUp { time: t, limit: BLOW_UP_LIMIT });
        }
        out.extend_from_slice(&u);
    }
    Tensor::matrix(steps, n, out)
}
