//! ETDRK4 (Cox-Matthews, with Kassam-Trefethen contour evaluation of the
//! phi-functions) for `u_t = −u_xx − u_xxxx − ½(u²)_x`.

use num_complex::Complex64;

use super::{FftPlan, Grid};
use crate::error::Result;

const CONTOUR_POINTS: usize = 32;

pub(crate) struct KsIntegrator {
    plan: FftPlan,
    /// `i·k` multipliers for the first derivative; Nyquist mode zeroed.
    deriv: Vec<Complex64>,
    /// Linear symbol `k² − k⁴`.
    linear: Vec<f64>,
    nonlinear: bool,
    h: f64,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl KsIntegrator {
    pub(crate) fn new(grid: &Grid, h: f64, nonlinear: bool) -> Result<Self> {
        let n = grid.n;
        let plan = FftPlan::new(n)?;
        let deriv = (0..n)
            .map(|m| if 2 * m == n { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, grid.wavenumber(m)) })
            .collect();
        let linear = (0..n)
            .map(|m| {
                let k = grid.wavenumber(m);
                k * k - k * k * k * k
            })
            .collect();
        let mut s = Self {
            plan,
            deriv,
            linear,
            nonlinear,
            h: f64::NAN,
            e: vec![0.0; n],
            e2: vec![0.0; n],
            q: vec![0.0; n],
            f1: vec![0.0; n],
            f2: vec![0.0; n],
            f3: vec![0.0; n],
        };
        s.set_step(h)?;
        Ok(s)
    }

    pub(crate) fn set_step(&mut self, h: f64) -> Result<()> {
        if h == self.h {
            return Ok(());
        }
        self.h = h;
        let roots: Vec<Complex64> = (1..=CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, std::f64::consts::PI * (j as f64 - 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let mean_re = |f: &dyn Fn(Complex64) -> Complex64| -> f64 {
            roots.iter().map(|&r| f(r).re).sum::<f64>() / CONTOUR_POINTS as f64
        };
        for (i, &l) in self.linear.iter().enumerate() {
            let hl = h * l;
            self.e[i] = hl.exp();
            self.e2[i] = (0.5 * hl).exp();
            self.q[i] = h * mean_re(&|r| {
                let z = hl + r;
                ((z / 2.0).exp() - 1.0) / z
            });
            self.f1[i] = h * mean_re(&|r| {
                let z = hl + r;
                (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / (z * z * z)
            });
            self.f2[i] = h * mean_re(&|r| {
                let z = hl + r;
                (2.0 + z + z.exp() * (z - 2.0)) / (z * z * z)
            });
            self.f3[i] = h * mean_re(&|r| {
                let z = hl + r;
                (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / (z * z * z)
            });
        }
        Ok(())
    }

    /// Fourier transform of `−½ (u²)_x`.
    fn nonlinear_term(&self, v: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        if !self.nonlinear {
            out.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            return Ok(());
        }
        out.copy_from_slice(v);
        self.plan.inverse(out)?;
        for c in out.iter_mut() {
            *c = Complex64::new(c.re * c.re, 0.0);
        }
        self.plan.forward(out)?;
        for (c, &d) in out.iter_mut().zip(&self.deriv) {
            *c *= -0.5 * d;
        }
        Ok(())
    }

    /// Takes `steps` ETDRK4 steps of size `h` in place.
    pub(crate) fn advance(&self, u: &mut [f64], steps: usize) -> Result<()> {
        let n = u.len();
        let mut v = self.plan.forward_real(u)?;
        let zero = Complex64::new(0.0, 0.0);
        let (mut nv, mut na, mut nb, mut nc) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
        let (mut a, mut b, mut c) = (vec![zero; n], vec![zero; n], vec![zero; n]);
        for _ in 0..steps {
            self.nonlinear_term(&v, &mut nv)?;
            for i in 0..n {
                a[i] = self.e2[i] * v[i] + self.q[i] * nv[i];
            }
            self.nonlinear_term(&a, &mut na)?;
            for i in 0..n {
                b[i] = self.e2[i] * v[i] + self.q[i] * na[i];
            }
            self.nonlinear_term(&b, &mut nb)?;
            for i in 0..n {
                c[i] = self.e2[i] * a[i] + self.q[i] * (2.0 * nb[i] - nv[i]);
            }
            self.nonlinear_term(&c, &mut nc)?;
            for i in 0..n {
                v[i] = self.e[i] * v[i] + nv[i] * self.f1[i] + 2.0 * (na[i] + nb[i]) * self.f2[i] + nc[i] * self.f3[i];
            }
        }
        let back = self.plan.inverse_real(&v)?;
        u.copy_from_slice(&back);
        Ok(())
    }

    /// Pseudo-spectral `−u_xx − u_xxxx − u u_x`.
    pub(crate) fn rhs(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let v = self.plan.forward_real(u)?;
        let lin: Vec<Complex64> = v.iter().zip(&self.linear).map(|(c, &l)| c * l).collect();
        let lin = self.plan.inverse_real(&lin)?;
        let ux: Vec<Complex64> = v.iter().zip(&self.deriv).map(|(c, d)| c * d).collect();
        let ux = self.plan.inverse_real(&ux)?;
        for i in 0..u.len() {
            out[i] = lin[i] - if self.nonlinear { u[i] * ux[i] } else { 0.0 };
        }
        Ok(())
    }
}
