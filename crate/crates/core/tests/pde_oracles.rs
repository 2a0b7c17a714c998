use std::f64::consts::PI;

use kae_core::numcore::Tensor;
use kae_core::pde::{
    fft_real, generate_ic, rhs, simulate, simulate_with, Grid, IcFamily, IcParams, IcRanges, PdeKind, PdeSpec,
    SolverOptions, DEFAULT_DT,
};
use kae_core::Error;

/// Closed-form logistic solution of `u' = β u (1 − u)`.
fn logistic(u0: f64, beta: f64, t: f64) -> f64 {
    u0 * (beta * t).exp() / (1.0 + u0 * ((beta * t).exp() - 1.0))
}

fn shift(u: &[f64], s: usize) -> Vec<f64> {
    let n = u.len();
    (0..n).map(|i| u[(i + n - s) % n]).collect()
}

fn grid(kind: PdeKind) -> Grid {
    Grid::for_pde(kind, 128).unwrap()
}

#[test]
fn fixed_points_have_zero_rhs() {
    let g = grid(PdeKind::Fisher);
    for c in [0.0, 1.0] {
        let u = Tensor::vector(vec![c; g.n]).unwrap();
        let r = rhs(&PdeSpec::fisher(), &u, &g).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }
    let u = Tensor::vector(vec![0.7; g.n]).unwrap();
    let r = rhs(&PdeSpec::burgers(), &u, &g).unwrap();
    assert!(r.data().iter().all(|&v| v == 0.0));
}

#[test]
fn rhs_reports_non_finite_index() {
    let g = grid(PdeKind::Fisher);
    let mut v = vec![0.1; g.n];
    v[17] = f64::NAN;
    let u = Tensor::vector(v).unwrap();
    assert!(matches!(rhs(&PdeSpec::fisher(), &u, &g), Err(Error::NonFinite { index: 17 })));
}

#[test]
fn uniform_fisher_tracks_logistic() {
    let g = grid(PdeKind::Fisher);
    let ic = Tensor::vector(vec![0.5; g.n]).unwrap();
    // 51 saved states so that the last one sits at t = 0.1
    let states = simulate(&PdeSpec::fisher(), &ic, &g, 51, DEFAULT_DT).unwrap();
    for k in 0..51 {
        let exact = logistic(0.5, 1.0, k as f64 * DEFAULT_DT);
        for &v in states.row(k) {
            assert!((v - exact).abs() < 1e-8, "t = {}: {v} vs {exact}", k as f64 * DEFAULT_DT);
        }
    }
    let last = states.row(50)[0];
    assert!((last - 0.524979).abs() < 1e-6);
}

#[test]
fn pure_heat_decay_of_sine() {
    // Second-order differences carry a relative eigenvalue error of dx²/12;
    // n = 1024 keeps it well below the 1e-6 tolerance.
    let g = Grid::new(1024, -PI, PI).unwrap();
    let spec = PdeSpec::Fisher { alpha: 1.0, beta: 0.0 };
    let ic = generate_ic(&IcParams::new(IcFamily::Sine), &g).unwrap();
    let states = simulate(&spec, &ic, &g, 51, DEFAULT_DT).unwrap();
    let basis: Vec<f64> = g.points().iter().map(|x| x.sin()).collect();
    let amp = |row: &[f64]| {
        row.iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>() / basis.iter().map(|b| b * b).sum::<f64>()
    };
    let ratio = amp(states.row(50)) / amp(states.row(0));
    assert!((ratio - (-0.1f64).exp()).abs() < 1e-6, "ratio {ratio}");
    assert!((ratio - 0.904837).abs() < 1e-6);
}

#[test]
fn constant_burgers_and_zero_ks_are_invariant() {
    let g = grid(PdeKind::Burgers);
    let ic = Tensor::vector(vec![0.3; g.n]).unwrap();
    let states = simulate(&PdeSpec::burgers(), &ic, &g, 50, DEFAULT_DT).unwrap();
    assert!(states.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));

    let g = grid(PdeKind::Ks);
    let ic = Tensor::zeros(&[g.n]);
    let states = simulate(&PdeSpec::ks(), &ic, &g, 50, DEFAULT_DT).unwrap();
    assert!(states.data().iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn linear_ks_matches_exact_mode_growth() {
    let g = grid(PdeKind::Ks);
    let spec = PdeSpec::Ks { nonlinear: false };
    let ic = generate_ic(&IcParams::draw(IcFamily::WhiteNoise, 4, &g, &IcRanges::default()).unwrap(), &g).unwrap();
    let states = simulate(&spec, &ic, &g, 50, DEFAULT_DT).unwrap();
    let v0 = fft_real(ic.data()).unwrap();
    let t = 49.0 * DEFAULT_DT;
    let vt = fft_real(states.row(49)).unwrap();
    let scale = v0.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for m in 0..g.n {
        let signed = if m <= g.n / 2 { m as f64 } else { m as f64 - g.n as f64 };
        let k = 2.0 * PI * signed / g.length();
        let expected = v0[m] * (k * k - k.powi(4)).mul_add(t, 0.0).exp();
        assert!((vt[m] - expected).norm() < 1e-12 * scale, "mode {m}");
    }
}

#[test]
fn solvers_are_shift_equivariant() {
    for kind in [PdeKind::Fisher, PdeKind::Burgers, PdeKind::Ks] {
        let g = grid(kind);
        let spec = PdeSpec::default_for(kind);
        let ic = generate_ic(&IcParams::draw(IcFamily::WhiteNoise, 21, &g, &IcRanges::default()).unwrap(), &g).unwrap();
        let s = 37;
        let shifted = Tensor::vector(shift(ic.data(), s)).unwrap();
        let a = simulate(&spec, &ic, &g, 50, DEFAULT_DT).unwrap();
        let b = simulate(&spec, &shifted, &g, 50, DEFAULT_DT).unwrap();
        for k in 0..50 {
            let expect = shift(a.row(k), s);
            for (x, y) in b.row(k).iter().zip(&expect) {
                assert!((x - y).abs() < 1e-9, "{kind} step {k}");
            }
        }
    }
}

#[test]
fn fisher_comparison_principle() {
    let g = grid(PdeKind::Fisher);
    let ranges = IcRanges::default();
    for seed in 0..6 {
        for family in [IcFamily::Sine, IcFamily::Square, IcFamily::Pulse, IcFamily::Gaussian] {
            let p = IcParams::draw(family, seed, &g, &ranges).unwrap();
            let raw = generate_ic(&p, &g).unwrap();
            // map into [0, 1]
            let a = p.amplitude;
            let ic = raw.map(|v| ((v / a + 1.0) / 2.0).clamp(0.0, 1.0));
            let states = simulate(&PdeSpec::fisher(), &ic, &g, 51, DEFAULT_DT).unwrap();
            assert!(states.data().iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)), "{family} seed {seed}");
        }
    }
}

#[test]
fn rk4_convergence_order() {
    let g = grid(PdeKind::Fisher);
    let ic = generate_ic(&IcParams { amplitude: 0.8, wavenumber: 2, ..IcParams::new(IcFamily::Sine) }, &g).unwrap();
    let spec = PdeSpec::fisher();
    let run = |m| simulate_with(&spec, &ic, &g, 51, DEFAULT_DT, &SolverOptions { substeps: Some(m) }).unwrap();
    let reference = run(64);
    let err = |m| {
        let s = run(m);
        s.row(50).iter().zip(reference.row(50)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (e4, e8) = (err(4), err(8));
    assert!(e4 / e8 >= 8.0, "error ratio {} ({e4:e} / {e8:e})", e4 / e8);
}

#[test]
fn blow_up_and_parameter_errors() {
    let g = grid(PdeKind::Fisher);
    let ic = Tensor::vector(vec![-1e5; g.n]).unwrap();
    match simulate(&PdeSpec::fisher(), &ic, &g, 10, DEFAULT_DT) {
        Err(Error::BlowUp { time, .. }) => assert!((time - DEFAULT_DT).abs() < 1e-15),
        other => panic!("expected blow-up, got {other:?}"),
    }
    let ok = Tensor::vector(vec![0.5; g.n]).unwrap();
    assert!(simulate(&PdeSpec::fisher(), &ok, &g, 1, DEFAULT_DT).is_err());
    assert!(simulate(&PdeSpec::fisher(), &ok, &g, 5, 0.0).is_err());
    assert!(simulate(&PdeSpec::Fisher { alpha: 1.0, beta: -1.0 }, &ok, &g, 5, DEFAULT_DT).is_err());
    assert!(Grid::new(100, -1.0, 1.0).is_err());
}

#[test]
fn ks_domain_and_chaotic_run_stay_finite() {
    let g = grid(PdeKind::Ks);
    assert!((g.x_min + 4.0 * PI).abs() < 1e-15 && (g.x_max - 4.0 * PI).abs() < 1e-15);
    for family in IcFamily::ALL {
        let p = IcParams::draw(family, 3, &g, &IcRanges::default()).unwrap();
        let ic = generate_ic(&p, &g).unwrap();
        let s = simulate(&PdeSpec::ks(), &ic, &g, 50, DEFAULT_DT).unwrap();
        assert!(s.first_non_finite().is_none());
    }
}
