//! Eigenvalues of a dense real matrix: Householder reduction to upper
//! Hessenberg form followed by Francis implicit double-shift QR.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numcore::Tensor;
use crate::report::{num, Panel, Svg};

/// Relative deflation threshold for subdiagonal entries.
pub const DEFLATION_EPS: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenSpectrum {
    /// Sorted by descending modulus, then descending real part, then descending imaginary part.
    pub eigenvalues: Vec<Complex64>,
}

impl EigenSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |z| z.norm())
    }

    /// Largest distance from any eigenvalue to the conjugate of its nearest partner.
    pub fn conjugate_gap(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| self.eigenvalues.iter().map(|w| (w - z.conj()).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    /// Columns `index, re, im, modulus`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,re,im,modulus\n");
        for (i, z) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{}", num(z.re), num(z.im), num(z.norm()));
        }
        out
    }

    /// Scatter of the eigenvalues over the unit circle.
    pub fn to_svg(&self, title: &str) -> String {
        let extent = self.eigenvalues.iter().map(|z| z.re.abs().max(z.im.abs())).fold(1.0_f64, f64::max) * 1.15;
        let mut svg = Svg::new(520.0, 520.0);
        let p = Panel::new(70.0, 40.0, 420.0, 420.0, (-extent, extent), (-extent, extent));
        let circle: Vec<(f64, f64)> = (0..=256)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 256.0;
                (t.cos(), t.sin())
            })
            .collect();
        let (cx, cy): (Vec<f64>, Vec<f64>) = circle.into_iter().unzip();
        p.series(&mut svg, &cx, &cy, "#888888", 1.0, true);
        svg.line(p.px(-extent), p.py(0.0), p.px(extent), p.py(0.0), "#cccccc", 1.0);
        svg.line(p.px(0.0), p.py(-extent), p.px(0.0), p.py(extent), "#cccccc", 1.0);
        let re: Vec<f64> = self.eigenvalues.iter().map(|z| z.re).collect();
        let im: Vec<f64> = self.eigenvalues.iter().map(|z| z.im).collect();
        p.markers(&mut svg, &re, &im, "#1f4e9c", 4.0);
        p.frame(&mut svg, title, "Re(λ)", Some("Im(λ)"));
        svg.finish()
    }
}

/// Row-major square matrix helper.
struct Mat {
    n: usize,
    a: Vec<f64>,
}

impl Mat {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * self.n + j]
    }
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(m: &mut Mat) {
    let n = m.n;
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let len = n - k - 1;
        let x: Vec<f64> = (0..len).map(|i| m.at(k + 1 + i, k)).collect();
        let norm = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        v[..len].copy_from_slice(&x);
        v[0] -= alpha;
        let vnorm = v[..len].iter().map(|t| t * t).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v[..len].iter_mut().for_each(|t| *t /= vnorm);
        // A ← H·A on rows k+1..n
        for j in 0..n {
            let s: f64 = (0..len).map(|i| v[i] * m.at(k + 1 + i, j)).sum();
            for i in 0..len {
                *m.at_mut(k + 1 + i, j) -= 2.0 * v[i] * s;
            }
        }
        // A ← A·H on columns k+1..n
        for i in 0..n {
            let s: f64 = (0..len).map(|j| m.at(i, k + 1 + j) * v[j]).sum();
            for j in 0..len {
                *m.at_mut(i, k + 1 + j) -= 2.0 * s * v[j];
            }
        }
        *m.at_mut(k + 1, k) = alpha;
        for i in k + 2..n {
            *m.at_mut(i, k) = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (EISPACK `hqr` layout).
fn hqr(m: &mut Mat) -> Result<Vec<Complex64>> {
    let n = m.n;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += m.at(i, j).abs();
        }
    }
    let max_iter = 100 * n.max(1);
    let mut total = 0;
    let mut t = 0.0;
    let mut nn = n as isize - 1;
    let mut its = 0;
    while nn >= 0 {
        let nu = nn as usize;
        // look for a negligible subdiagonal element
        let mut l = nu;
        while l >= 1 {
            let mut s = m.at(l - 1, l - 1).abs() + m.at(l, l).abs();
            if s == 0.0 {
                s = anorm;
            }
            if m.at(l, l - 1).abs() <= DEFLATION_EPS * s {
                *m.at_mut(l, l - 1) = 0.0;
                break;
            }
            l -= 1;
        }
        let mut x = m.at(nu, nu);
        if l == nu {
            wr[nu] = x + t;
            wi[nu] = 0.0;
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = m.at(nu - 1, nu - 1);
        let mut w = m.at(nu, nu - 1) * m.at(nu - 1, nu);
        if l == nu - 1 {
            let pp = 0.5 * (y - x);
            let qq = pp * pp + w;
            let z = qq.abs().sqrt();
            x += t;
            if qq >= 0.0 {
                let z = pp + z.copysign(pp);
                wr[nu - 1] = x + z;
                wr[nu] = if z != 0.0 { x - w / z } else { x + z };
                wi[nu - 1] = 0.0;
                wi[nu] = 0.0;
            } else {
                wr[nu - 1] = x + pp;
                wr[nu] = x + pp;
                wi[nu - 1] = z;
                wi[nu] = -z;
            }
            nn -= 2;
            its = 0;
            continue;
        }
        if total >= max_iter {
            return Err(Error::Numerical(format!(
                "QR iteration did not converge after {max_iter} sweeps; residual |h[{nu},{}]| = {:e}",
                nu - 1,
                m.at(nu, nu - 1).abs()
            )));
        }
        if its > 0 && its % 10 == 0 {
            // exceptional shift
            t += x;
            for i in 0..=nu {
                *m.at_mut(i, i) -= x;
            }
            let s = m.at(nu, nu - 1).abs() + m.at(nu - 1, nu - 2).abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        total += 1;
        // look for two consecutive small subdiagonal elements
        let mut mm = nu - 2;
        let (mut p, mut q, mut r) = loop {
            let z = m.at(mm, mm);
            let rr = x - z;
            let ss = y - z;
            let p = (rr * ss - w) / m.at(mm + 1, mm) + m.at(mm, mm + 1);
            let q = m.at(mm + 1, mm + 1) - z - rr - ss;
            let r = m.at(mm + 2, mm + 1);
            let s = p.abs() + q.abs() + r.abs();
            let (p, q, r) = (p / s, q / s, r / s);
            if mm == l {
                break (p, q, r);
            }
            let u = m.at(mm, mm - 1).abs() * (q.abs() + r.abs());
            let v = p.abs() * (m.at(mm - 1, mm - 1).abs() + z.abs() + m.at(mm + 1, mm + 1).abs());
            if u <= DEFLATION_EPS * v {
                break (p, q, r);
            }
            mm -= 1;
        };
        for i in mm + 2..=nu {
            *m.at_mut(i, i - 2) = 0.0;
            if i != mm + 2 {
                *m.at_mut(i, i - 3) = 0.0;
            }
        }
        // double QR step on rows l..nu and columns mm..nu
        let mut k = mm;
        while k < nu {
            if k != mm {
                p = m.at(k, k - 1);
                q = m.at(k + 1, k - 1);
                r = if k != nu - 1 { m.at(k + 2, k - 1) } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = (p * p + q * q + r * r).sqrt().copysign(p);
            if s != 0.0 {
                if k == mm {
                    if l != mm {
                        *m.at_mut(k, k - 1) = -m.at(k, k - 1);
                    }
                } else {
                    *m.at_mut(k, k - 1) = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nu {
                    let mut pp = m.at(k, j) + q * m.at(k + 1, j);
                    if k != nu - 1 {
                        pp += r * m.at(k + 2, j);
                        *m.at_mut(k + 2, j) -= pp * z;
                    }
                    *m.at_mut(k + 1, j) -= pp * y;
                    *m.at_mut(k, j) -= pp * x;
                }
                let mmin = nu.min(k + 3);
                for i in l..=mmin {
                    let mut pp = x * m.at(i, k) + y * m.at(i, k + 1);
                    if k != nu - 1 {
                        pp += z * m.at(i, k + 2);
                        *m.at_mut(i, k + 2) -= pp * r;
                    }
                    *m.at_mut(i, k + 1) -= pp * q;
                    *m.at_mut(i, k) -= pp;
                }
            }
            k += 1;
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}

fn order(a: &Complex64, b: &Complex64) -> Ordering {
    b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)).then(b.im.total_cmp(&a.im))
}

/// All eigenvalues of the square matrix `k`.
pub fn eigenvalues(k: &Tensor) -> Result<EigenSpectrum> {
    let s = k.shape();
    if s.len() != 2 || s[0] != s[1] {
        let r = s.first().copied().unwrap_or(0);
        return Err(Error::dim("eigenvalues", s, &[r, r]));
    }
    if let Some(index) = k.first_non_finite() {
        return Err(Error::NonFinite { index });
    }
    let mut m = Mat { n: s[0], a: k.to_vec() };
    hessenberg(&mut m);
    let mut eigenvalues = hqr(&mut m)?;
    eigenvalues.sort_by(order);
    Ok(EigenSpectrum { eigenvalues })
}

/// Spectrum of a model's K, written as `spectrum.csv` and `spectrum.svg` under `dir`.
pub fn spectrum_report(model: &Model, dir: &Path) -> Result<(EigenSpectrum, [PathBuf; 2])> {
    let spec = eigenvalues(model.koopman())?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("spectrum.csv");
    let svg = dir.join("spectrum.svg");
    write_atomic(&csv, spec.to_csv().as_bytes())?;
    let title = format!("Eigenvalues of K (r = {})", spec.len());
    write_atomic(&svg, spec.to_svg(&title).as_bytes())?;
    Ok((spec, [csv, svg]))
}
