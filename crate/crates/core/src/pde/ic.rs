use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FftPlan, Grid};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Number of retained Fourier modes (0..16) for white-noise initial conditions.
pub const NOISE_MODES: usize = 16;

/// Initial-condition family. Training and validation use the first three.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcFamily {
    WhiteNoise,
    Sine,
    Square,
    Gaussian,
    Triangle,
    Sawtooth,
    Pulse,
}

impl IcFamily {
    pub const ALL: [IcFamily; 7] = [
        IcFamily::WhiteNoise,
        IcFamily::Sine,
        IcFamily::Square,
        IcFamily::Gaussian,
        IcFamily::Triangle,
        IcFamily::Sawtooth,
        IcFamily::Pulse,
    ];

    pub const TRAINING: [IcFamily; 3] = [IcFamily::WhiteNoise, IcFamily::Sine, IcFamily::Square];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            IcFamily::WhiteNoise => "white_noise",
            IcFamily::Sine => "sine",
            IcFamily::Square => "square",
            IcFamily::Gaussian => "gaussian",
            IcFamily::Triangle => "triangle",
            IcFamily::Sawtooth => "sawtooth",
            IcFamily::Pulse => "pulse",
        }
    }
}

impl fmt::Display for IcFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IcFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown initial-condition family '{s}'")))
    }
}

/// Sampling ranges for random initial conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcRanges {
    pub amplitude: (f64, f64),
    pub max_wavenumber: u32,
    pub gaussian_width: (f64, f64),
    pub pulse_width: (f64, f64),
}

impl Default for IcRanges {
    fn default() -> Self {
        Self { amplitude: (0.2, 1.0), max_wavenumber: 8, gaussian_width: (0.2, 1.0), pulse_width: (0.5, 2.0) }
    }
}

/// Fully specified initial condition. Which fields matter depends on `family`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcParams {
    pub family: IcFamily,
    pub amplitude: f64,
    /// Number of periods across the domain.
    pub wavenumber: u32,
    pub phase: f64,
    /// Gaussian mean or pulse centre.
    pub center: f64,
    /// Gaussian standard deviation or pulse width.
    pub width: f64,
    /// Seed of the white-noise sample.
    pub seed: u64,
}

impl IcParams {
    pub fn new(family: IcFamily) -> Self {
        Self { family, amplitude: 1.0, wavenumber: 1, phase: 0.0, center: 0.0, width: 1.0, seed: 0 }
    }

    /// Draws every parameter from `ranges` with a generator seeded by `seed` alone.
    pub fn draw(family: IcFamily, seed: u64, grid: &Grid, ranges: &IcRanges) -> Result<Self> {
        let kmax = ranges.max_wavenumber.min((grid.n / 8).max(1) as u32);
        if kmax == 0 {
            return Err(Error::Parameter("max_wavenumber must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitude = uniform(&mut rng, ranges.amplitude);
        let wavenumber = rng.random_range(1..=kmax);
        let phase = rng.random_range(0.0..2.0 * PI);
        let center = rng.random_range(grid.x_min..grid.x_max);
        let width = match family {
            IcFamily::Pulse => uniform(&mut rng, ranges.pulse_width),
            _ => uniform(&mut rng, ranges.gaussian_width),
        };
        Ok(Self { family, amplitude, wavenumber, phase, center, width, seed })
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Parameter(format!("amplitude must be ≥ 0, got {}", self.amplitude)));
        }
        let periodic =
            matches!(self.family, IcFamily::Sine | IcFamily::Square | IcFamily::Triangle | IcFamily::Sawtooth);
        if periodic && (self.wavenumber == 0 || self.wavenumber as usize > (grid.n / 8).max(1)) {
            return Err(Error::Parameter(format!(
                "wavenumber must be in 1..={} for n = {}, got {}",
                (grid.n / 8).max(1),
                grid.n,
                self.wavenumber
            )));
        }
        if matches!(self.family, IcFamily::Gaussian | IcFamily::Pulse) && !(self.width > 0.0) {
            return Err(Error::Parameter(format!("width must be > 0, got {}", self.width)));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Evaluates an initial condition on the grid. Deterministic in `params`.
pub fn generate_ic(params: &IcParams, grid: &Grid) -> Result<Tensor> {
    params.validate(grid)?;
    let a = params.amplitude;
    let len = grid.length();
    let theta = |x: f64| 2.0 * PI * params.wavenumber as f64 * x / len + params.phase;
    // signed periodic distance from the centre
    let dist = |x: f64| {
        let d = (x - params.center).rem_euclid(len);
        if d > len / 2.0 {
            d - len
        } else {
            d
        }
    };
    let values: Vec<f64> = match params.family {
        IcFamily::Sine => grid.points().into_iter().map(|x| a * theta(x).sin()).collect(),
        IcFamily::Square => grid
            .points()
            .into_iter()
            .map(|x| {
                let s = theta(x).sin();
                if s > 0.0 {
                    a
                } else if s < 0.0 {
                    -a
                } else {
                    0.0
                }
            })
            .collect(),
        IcFamily::Triangle => grid.points().into_iter().map(|x| a * (2.0 / PI) * theta(x).sin().asin()).collect(),
        IcFamily::Sawtooth => grid
            .points()
            .into_iter()
            .map(|x| {
                let c = theta(x) / (2.0 * PI);
                a * 2.0 * (c - (c + 0.5).floor())
            })
            .collect(),
        IcFamily::Gaussian => grid
            .points()
            .into_iter()
            .map(|x| {
                let s2 = 2.0 * params.width * params.width;
                (-3..=3)
                    .map(|m| {
                        let d = dist(x) + m as f64 * len;
                        (-d * d / s2).exp()
                    })
                    .sum::<f64>()
                    * a
            })
            .collect(),
        IcFamily::Pulse => {
            grid.points().into_iter().map(|x| if dist(x).abs() <= params.width / 2.0 { a } else { 0.0 }).collect()
        }
        IcFamily::WhiteNoise => white_noise(params, grid)?,
    };
    Tensor::vector(values)
}

/// I.i.d. standard normal samples scaled by the amplitude, low-pass filtered
/// to the lowest [`NOISE_MODES`] Fourier modes.
fn white_noise(params: &IcParams, grid: &Grid) -> Result<Vec<f64>> {
    // Offset the stream so the noise is independent of the parameter draw.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
    let raw: Vec<f64> = (0..grid.n).map(|_| params.amplitude * rng.sample::<f64, _>(StandardNormal)).collect();
    let plan = FftPlan::new(grid.n)?;
    let mut spec = plan.forward_real(&raw)?;
    for (m, c) in spec.iter_mut().enumerate() {
        let k = m.min(grid.n - m);
        if k >= NOISE_MODES {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    plan.inverse_real(&spec)
}
