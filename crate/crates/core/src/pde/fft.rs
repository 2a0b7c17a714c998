//! Iterative radix-2 Cooley-Tukey FFT.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed twiddles and bit-reversal permutation for one length.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    rev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Parameter(format!("FFT length must be a power of two, got {n}")));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
        // Each twiddle is evaluated directly rather than by recurrence.
        let twiddles =
            (0..n / 2).map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64)).collect();
        Ok(Self { n, twiddles, rev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, buf: &[Complex64]) -> Result<()> {
        if buf.len() != self.n {
            return Err(Error::Parameter(format!("FFT plan for length {} applied to length {}", self.n, buf.len())));
        }
        Ok(())
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    /// Unnormalized forward transform `X_k = Σ x_j e^{-2πi jk/n}`.
    pub fn forward(&self, buf: &mut [Complex64]) -> Result<()> {
        self.check(buf)?;
        self.transform(buf, false);
        Ok(())
    }

    /// Inverse transform, normalized by `1/n`.
    pub fn inverse(&self, buf: &mut [Complex64]) -> Result<()> {
        self.check(buf)?;
        self.transform(buf, true);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    pub fn forward_real(&self, u: &[f64]) -> Result<Vec<Complex64>> {
        let mut buf: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf)?;
        Ok(buf)
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Result<Vec<f64>> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf)?;
        Ok(buf.into_iter().map(|c| c.re).collect())
    }
}

pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.forward(&mut buf)?;
    Ok(buf)
}

pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.inverse(&mut buf)?;
    Ok(buf)
}

pub fn fft_real(u: &[f64]) -> Result<Vec<Complex64>> {
    FftPlan::new(u.len())?.forward_real(u)
}

pub fn ifft_real(spectrum: &[Complex64]) -> Result<Vec<f64>> {
    FftPlan::new(spectrum.len())?.inverse_real(spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²) reference transform.
    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(FftPlan::new(12).is_err());
        assert!(FftPlan::new(0).is_err());
        assert!(fft_real(&[1.0; 6]).is_err());
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let s = fft_real(&[2.5; 16]).unwrap();
        assert!((s[0] - Complex64::new(40.0, 0.0)).norm() < 1e-12);
        assert!(s[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn cosine_energy_in_plus_minus_k() {
        let n = 32;
        let k = 3;
        let u: Vec<f64> = (0..n).map(|j| (2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64).cos()).collect();
        let s = fft_real(&u).unwrap();
        for (m, c) in s.iter().enumerate() {
            if m == k || m == n - k {
                assert!((c.re - n as f64 / 2.0).abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12, "mode {m}: {c}");
            }
        }
    }

    #[test]
    fn matches_naive_dft_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[1usize, 2, 8, 64, 128] {
            let x: Vec<Complex64> =
                (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let fast = fft(&x).unwrap();
            let slow = naive_dft(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10);
            }
            let back = ifft(&fast).unwrap();
            let err = back.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "n = {n}: {err}");
            // Parseval: Σ|x|² = Σ|X|²/n
            let ex: f64 = x.iter().map(|c| c.norm_sqr()).sum();
            let ek: f64 = fast.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            assert!((ex - ek).abs() < 1e-10);
        }
    }
}
