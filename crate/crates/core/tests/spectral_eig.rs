use kae_core::model::{Model, ModelConfig};
use kae_core::numcore::Tensor;
use kae_core::spectral::{eigenvalues, spectrum_report};
use kae_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn tensor(a: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(a).unwrap()
}

/// Determinant by Gaussian elimination with partial pivoting.
fn lu_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        if p != k {
            m.swap(p, k);
            det = -det;
        }
        let piv = m[k][k];
        det *= piv;
        for i in k + 1..n {
            let f = m[i][k] / piv;
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    det
}

/// Inverse by Gauss-Jordan with partial pivoting.
fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.extend((0..n).map(|j| f64::from(u8::from(i == j))));
            r
        })
        .collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(p, k);
        let piv = m[k][k];
        m[k].iter_mut().for_each(|v| *v /= piv);
        for i in 0..n {
            if i != k {
                let f = m[i][k];
                let row = m[k].clone();
                m[i].iter_mut().zip(row).for_each(|(v, r)| *v -= f * r);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn identity_gives_exact_ones() {
    for n in [1, 2, 5, 21] {
        let s = eigenvalues(&Tensor::identity(n)).unwrap();
        assert_eq!(s.len(), n);
        assert!(s.eigenvalues.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }
}

#[test]
fn rotation_gives_unit_conjugate_pair() {
    for theta in [std::f64::consts::FRAC_PI_2, 0.3, 2.5, -1.1] {
        let (c, s) = (f64::cos(theta), f64::sin(theta));
        let k = tensor(&[vec![c, -s], vec![s, c]]);
        let e = eigenvalues(&k).unwrap().eigenvalues;
        let want = Complex64::new(c, theta.abs().sin());
        assert!((e[0] - want).norm() < 1e-10, "{e:?}");
        assert!((e[1] - want.conj()).norm() < 1e-10, "{e:?}");
    }
}

#[test]
fn quarter_turn_is_plus_minus_i() {
    let e = eigenvalues(&tensor(&[vec![0.0, -1.0], vec![1.0, 0.0]])).unwrap().eigenvalues;
    assert!((e[0] - Complex64::new(0.0, 1.0)).norm() < 1e-10);
    assert!((e[1] - Complex64::new(0.0, -1.0)).norm() < 1e-10);
}

#[test]
fn trace_and_determinant_match_lu_oracle() {
    for n in [3, 5, 8, 13, 21, 32] {
        for seed in 0..5 {
            let a = random(n, 1000 * n as u64 + seed);
            let s = eigenvalues(&tensor(&a)).unwrap();
            assert_eq!(s.len(), n);
            let sum: Complex64 = s.eigenvalues.iter().sum();
            let prod: Complex64 = s.eigenvalues.iter().product();
            let trace: f64 = (0..n).map(|i| a[i][i]).sum();
            let det = lu_det(&a);
            let scale: f64 = (0..n).map(|i| a[i][i].abs()).sum::<f64>().max(trace.abs());
            assert!((sum.re - trace).abs() <= 1e-8 * scale, "n={n} seed={seed}: {} vs {trace}", sum.re);
            assert!(sum.im.abs() <= 1e-8 * scale);
            assert!(rel(prod.re, det) < 1e-8, "n={n} seed={seed}: {} vs {det}", prod.re);
            assert!(prod.im.abs() <= 1e-8 * det.abs());
            assert!(s.conjugate_gap() < 1e-10);
        }
    }
}

#[test]
fn upper_triangular_returns_diagonal() {
    let n = 9;
    let mut a = random(n, 77);
    for (i, row) in a.iter_mut().enumerate() {
        row[..i].iter_mut().for_each(|v| *v = 0.0);
    }
    let mut diag: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    diag.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    let e = eigenvalues(&tensor(&a)).unwrap().eigenvalues;
    for (z, d) in e.iter().zip(&diag) {
        assert!((z.re - d).abs() <= 4.0 * f64::EPSILON * d.abs(), "{z} vs {d}");
        assert_eq!(z.im, 0.0);
    }
}

#[test]
fn similarity_preserves_spectrum() {
    for seed in 0..5 {
        let n = 12;
        let k = random(n, seed);
        let mut p = random(n, seed + 100);
        for (i, row) in p.iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v *= 0.1);
            row[i] += 1.0;
        }
        let sim = mul(&inverse(&p), &mul(&k, &p));
        let a = eigenvalues(&tensor(&k)).unwrap().eigenvalues;
        let b = eigenvalues(&tensor(&sim)).unwrap().eigenvalues;
        for z in &a {
            let d = b.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-6, "seed {seed}: {z} unmatched ({d:e})");
        }
    }
}

#[test]
fn sorted_by_modulus_then_real_part() {
    let a = tensor(&[
        vec![-2.0, 0.0, 0.0, 0.0],
        vec![0.0, 2.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.5, 0.0],
        vec![0.0, 0.0, 0.0, -0.7],
    ]);
    let e = eigenvalues(&a).unwrap().eigenvalues;
    let re: Vec<f64> = e.iter().map(|z| z.re).collect();
    assert_eq!(re, vec![2.0, -2.0, -0.7, 0.5]);
}

#[test]
fn rejects_bad_input() {
    let rect = Tensor::zeros(&[2, 3]);
    assert!(matches!(eigenvalues(&rect), Err(Error::Dimension { .. })));
    let vec = Tensor::zeros(&[4]);
    assert!(matches!(eigenvalues(&vec), Err(Error::Dimension { .. })));
    let nan = tensor(&[vec![1.0, f64::NAN], vec![0.0, 1.0]]);
    assert!(matches!(eigenvalues(&nan), Err(Error::NonFinite { index: 1 })));
}

#[test]
fn companion_matrix_recovers_polynomial_roots() {
    // roots 1, 2, 3, 1±2i of a monic quintic
    let roots = [
        Complex64::new(1.0, 0.0),
        Complex64::new(2.0, 0.0),
        Complex64::new(3.0, 0.0),
        Complex64::new(1.0, 2.0),
        Complex64::new(1.0, -2.0),
    ];
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= v * r;
        }
        c = next;
    }
    let n = roots.len();
    let mut a = vec![vec![0.0; n]; n];
    for j in 0..n {
        a[0][j] = -c[j + 1].re;
    }
    for i in 1..n {
        a[i][i - 1] = 1.0;
    }
    let e = eigenvalues(&tensor(&a)).unwrap().eigenvalues;
    for r in roots {
        let d = e.iter().map(|z| (z - r).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-9, "{r}: {d:e}");
    }
}

#[test]
fn default_model_report_has_21_conjugate_closed_rows() {
    let mut model = Model::new(ModelConfig::default()).unwrap();
    let r = model.config().r;
    let k = random(r, 5).into_iter().map(|row| row.into_iter().map(|v| v * 0.2).collect()).collect::<Vec<_>>();
    model.set_koopman(tensor(&k)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (spec, [csv, svg]) = spectrum_report(&model, dir.path()).unwrap();
    assert_eq!(spec.len(), 21);
    let text = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(text.lines().next().unwrap(), "index,re,im,modulus");
    assert_eq!(rows.len(), 21);
    for &(re, im) in &rows {
        assert!(rows.iter().any(|&(r2, i2)| (r2 - re).abs() < 1e-10 && (i2 + im).abs() < 1e-10));
    }
    assert!(rows.iter().any(|&(_, im)| im != 0.0), "expected complex pairs for a random K");
    let s = std::fs::read_to_string(svg).unwrap();
    assert!(s.starts_with("<svg") && s.matches("<circle").count() == 21);
}

#[test]
fn identity_koopman_report_points_at_one() {
    let model = Model::new(ModelConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (spec, _) = spectrum_report(&model, dir.path()).unwrap();
    assert!(spec.eigenvalues.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    assert_eq!(spec.spectral_radius(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_identity_holds(n in 1usize..16, seed in any::<u64>()) {
        let a = random(n, seed);
        let s = eigenvalues(&tensor(&a)).unwrap();
        let sum: Complex64 = s.eigenvalues.iter().sum();
        let trace: f64 = (0..n).map(|i| a[i][i]).sum();
        let scale: f64 = a.iter().flatten().map(|v| v.abs()).sum::<f64>() / n as f64;
        prop_assert!((sum.re - trace).abs() <= 1e-9 * scale.max(1.0));
        prop_assert!(s.conjugate_gap() < 1e-10);
        for w in s.eigenvalues.windows(2) {
            prop_assert!(w[0].norm() >= w[1].norm() - 1e-15 * w[0].norm());
        }
    }
}
