//! Periodic 1-D PDE solvers and initial-condition families.
//!
//! Three equations are supported, all on periodic domains:
//!
//! - Fisher: `u_t = α u_xx + β u (1 − u)` on (−π, π)
//! - Burgers: `u_t + 10 u u_x = u_xx` on (−π, π)
//! - Kuramoto-Sivashinsky: `u_t + u_xx + u_xxxx + u u_x = 0` on (−4π, 4π)
//!
//! Fisher and Burgers use second-order central differences with classical RK4
//! substeps; Kuramoto-Sivashinsky uses ETDRK4 in Fourier space.

mod fft;
mod ic;
mod ks;
mod solver;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fft::{fft, fft_real, ifft, ifft_real, FftPlan};
pub use ic::{generate_ic, IcFamily, IcParams, IcRanges};
pub use solver::{rhs, simulate, simulate_with, SolverOptions, BLOW_UP_LIMIT};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Default number of saved states per trajectory.
pub const DEFAULT_STEPS: usize = 50;
/// Default save interval in seconds.
pub const DEFAULT_DT: f64 = 0.002;
/// Default spatial resolution.
pub const DEFAULT_N: usize = 128;

/// Uniform periodic grid; the right endpoint is excluded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
}

impl Grid {
    pub fn new(n: usize, x_min: f64, x_max: f64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Parameter(format!("grid size must be a power of two ≥ 2, got {n}")));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Parameter(format!("invalid domain ({x_min}, {x_max})")));
        }
        Ok(Self { n, x_min, x_max })
    }

    /// Default domain for `kind` at resolution `n`.
    pub fn for_pde(kind: PdeKind, n: usize) -> Result<Self> {
        let half = match kind {
            PdeKind::Fisher | PdeKind::Burgers => PI,
            PdeKind::Ks => 4.0 * PI,
        };
        Self::new(n, -half, half)
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Angular wavenumber of Fourier mode `m` (signed, FFT ordering).
    pub(crate) fn wavenumber(&self, m: usize) -> f64 {
        let signed = if m <= self.n / 2 { m as f64 } else { m as f64 - self.n as f64 };
        2.0 * PI * signed / self.length()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeKind {
    Fisher,
    Burgers,
    Ks,
}

impl PdeKind {
    pub fn tag(self) -> u8 {
        match self {
            PdeKind::Fisher => 0,
            PdeKind::Burgers => 1,
            PdeKind::Ks => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PdeKind::Fisher),
            1 => Some(PdeKind::Burgers),
            2 => Some(PdeKind::Ks),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PdeKind::Fisher => "fisher",
            PdeKind::Burgers => "burgers",
            PdeKind::Ks => "ks",
        }
    }
}

impl fmt::Display for PdeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PdeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fisher" => Ok(PdeKind::Fisher),
            "burgers" => Ok(PdeKind::Burgers),
            "ks" | "kuramoto-sivashinsky" => Ok(PdeKind::Ks),
            other => Err(Error::Config(format!("unknown PDE '{other}' (fisher|burgers|ks)"))),
        }
    }
}

/// Equation and coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PdeSpec {
    /// `u_t = alpha u_xx + beta u (1 − u)`
    Fisher { alpha: f64, beta: f64 },
    /// `u_t + advection u u_x = viscosity u_xx`
    Burgers { advection: f64, viscosity: f64 },
    /// `u_t + u_xx + u_xxxx + u u_x = 0`; `nonlinear = false` drops `u u_x`.
    Ks { nonlinear: bool },
}

impl PdeSpec {
    pub fn fisher() -> Self {
        PdeSpec::Fisher { alpha: 1.0, beta: 1.0 }
    }

    pub fn burgers() -> Self {
        PdeSpec::Burgers { advection: 10.0, viscosity: 1.0 }
    }

    pub fn ks() -> Self {
        PdeSpec::Ks { nonlinear: true }
    }

    pub fn default_for(kind: PdeKind) -> Self {
        match kind {
            PdeKind::Fisher => Self::fisher(),
            PdeKind::Burgers => Self::burgers(),
            PdeKind::Ks => Self::ks(),
        }
    }

    pub fn kind(&self) -> PdeKind {
        match self {
            PdeSpec::Fisher { .. } => PdeKind::Fisher,
            PdeSpec::Burgers { .. } => PdeKind::Burgers,
            PdeSpec::Ks { .. } => PdeKind::Ks,
        }
    }

    /// Rejects coefficient choices the solvers do not support.
    ///
    /// `beta = 0` is accepted for Fisher so the pure heat equation can serve
    /// as a test case.
    pub fn validate(&self) -> Result<()> {
        match *self {
            PdeSpec::Fisher { alpha, beta } if !(alpha >= 0.0 && beta >= 0.0) => Err(Error::Parameter(format!(
                "Fisher needs alpha ≥ 0 and beta ≥ 0, got alpha = {alpha}, beta = {beta}"
            ))),
            PdeSpec::Burgers { viscosity, advection } if !(viscosity >= 0.0 && advection.is_finite()) => {
                Err(Error::Parameter(format!("Burgers viscosity must be ≥ 0, got {viscosity}")))
            }
            _ => Ok(()),
        }
    }
}

/// One simulated solution: `states[k]` is the state at `t = k·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Tensor,
    pub dt: f64,
    pub ic_kind: IcFamily,
    pub seed: u64,
}

impl Trajectory {
    /// Draws an initial condition of `family` from `seed` and integrates it.
    pub fn generate(
        spec: &PdeSpec,
        grid: &Grid,
        family: IcFamily,
        seed: u64,
        ranges: &IcRanges,
        steps: usize,
        dt: f64,
    ) -> Result<Self> {
        let params = IcParams::draw(family, seed, grid, ranges)?;
        let ic = generate_ic(&params, grid)?;
        let states = simulate(spec, &ic, grid, steps, dt)?;
        Ok(Self { states, dt, ic_kind: family, seed })
    }

    pub fn steps(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.states.shape()[1]
    }
}
