use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kae_core::dataset::DatasetManifest;
use kae_core::model::{to_checkpoint_bytes, BlockKind, Model, ModelConfig};
use kae_core::pde::PdeKind;

fn kae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kae")).args(args).env_remove("KAE_THREADS").output().expect("spawn kae")
}

fn ok(args: &[&str]) -> String {
    let o = kae(args);
    assert!(
        o.status.success(),
        "kae {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(args: &[&str]) -> i32 {
    kae(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small Fisher dataset: 32 points, 50 states.
fn small_data(dir: &Path) -> PathBuf {
    let d = dir.join("data");
    ok(&["gen-data", "--train", "6", "--val", "3", "--test", "7", "--n", "32", "--out", s(&d)]);
    d
}

const TINY: [&str; 10] = ["--heads", "2", "--d-model", "8", "--ff-width", "16", "--rank", "5", "--batch", "4"];

fn train_tiny(data: &Path, ckpt: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--data", s(data), "--ckpt", s(ckpt), "--horizon", "3", "--quiet"];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn gen_data_defaults_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    for d in [&a, &b] {
        ok(&["gen-data", "--train", "3", "--val", "3", "--test", "7", "--seed", "5", "--out", s(d)]);
    }
    let m = DatasetManifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!((m.steps, m.dt, m.grid.n), (50, 0.002, 128));
    for f in ["train.kae", "val.kae", "test.kae", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_ks_domain() {
    let t = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--pde", "ks", "--train", "3", "--val", "3", "--test", "7", "--n", "32", "--out", s(t.path())]);
    let m = DatasetManifest::load(&t.path().join("manifest.json")).unwrap();
    let pi4 = 4.0 * std::f64::consts::PI;
    assert_eq!(m.pde.kind(), PdeKind::Ks);
    assert!((m.grid.x_min + pi4).abs() < 1e-15 && (m.grid.x_max - pi4).abs() < 1e-15);
}

#[test]
fn gen_data_config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&["gen-data", "--train", "4", "--out", s(t.path())]), 2);
    assert_eq!(code(&["gen-data", "--pde", "heat", "--out", s(t.path())]), 2);
    assert_eq!(code(&["gen-data", "--train", "3"]), 2);
    let cfg = t.path().join("bad.txt");
    fs::write(&cfg, "trian = 3\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&cfg), "--out", s(t.path())]), 2);
    assert_eq!(code(&["gen-data", "--config", s(&t.path().join("missing.txt")), "--out", s(t.path())]), 3);
}

#[test]
fn config_file_values_and_flag_override() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.txt");
    fs::write(&cfg, "# desk data\ntrain = 3\nval = 3\ntest = 7\nn = 32\nsteps = 8\nseed = 11\n").unwrap();
    let out = t.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--steps", "6", "--out", s(&out)]);
    let m = DatasetManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!((m.steps, m.base_seed, m.grid.n), (6, 11, 32));
    // the written config reproduces the run
    let again = t.path().join("again");
    ok(&["gen-data", "--config", s(&out.join("config.txt")), "--out", s(&again)]);
    for f in ["train.kae", "val.kae", "test.kae", "manifest.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_epochs_zero_writes_initialized_model() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let ckpt = t.path().join("m.kaec");
    train_tiny(&data, &ckpt, &["--epochs", "0"]);
    let cfg = ModelConfig { n: 32, r: 5, heads: 2, d_model: 8, ff_width: 16, ..ModelConfig::default() };
    let fresh = to_checkpoint_bytes(&Model::new(cfg).unwrap());
    assert_eq!(fs::read(&ckpt).unwrap(), fresh);
    assert_eq!(fs::read_to_string(t.path().join("m.history.csv")).unwrap().lines().count(), 1);
}

#[test]
fn training_is_bit_reproducible_and_resolves_config() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let a = t.path().join("a/m.kaec");
    let b = t.path().join("b/m.kaec");
    train_tiny(&data, &a, &["--epochs", "2"]);
    train_tiny(&data, &b, &["--epochs", "2"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let h = |p: &Path| -> Vec<String> {
        // wall_ms is the only nondeterministic column
        fs::read_to_string(p.with_file_name("m.history.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(h(&a), h(&b));
    assert_eq!(h(&a).len(), 5);
    // rerun from the written config
    let c = t.path().join("c/m.kaec");
    ok(&["train", "--config", s(&a.with_file_name("m.config.txt")), "--ckpt", s(&c), "--quiet"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let summary = fs::read_to_string(a.with_file_name("m.summary.txt")).unwrap();
    assert!(summary.contains("status = completed") && summary.contains("epochs_completed = 2"));
}

#[test]
fn denseres_checkpoint_has_no_attention() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let ckpt = t.path().join("d.kaec");
    train_tiny(&data, &ckpt, &["--epochs", "1", "--block", "denseres"]);
    let m = Model::load_checkpoint(&ckpt).unwrap();
    assert_eq!(m.config().block, BlockKind::DenseRes);
    assert!(m.params().iter().all(|(_, p)| !p.path.contains("attn")));
    assert!(m.params().iter().any(|(_, p)| p.path.contains("dense")));
}

#[test]
fn divergence_exits_4_and_keeps_last_good_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let ckpt = t.path().join("x.kaec");
    let mut args = vec!["train", "--data", s(&data), "--ckpt", s(&ckpt), "--horizon", "3", "--quiet"];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(&["--epochs", "5", "--lr", "1e300"]);
    assert_eq!(code(&args), 4);
    let m = Model::load_checkpoint(&ckpt).unwrap();
    assert!(m.params().iter().all(|(_, p)| p.value.first_non_finite().is_none()));
    assert!(fs::read_to_string(t.path().join("x.summary.txt")).unwrap().contains("diverged"));
}

#[test]
fn eval_reports_seven_families_on_test() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let ckpt = t.path().join("m.kaec");
    train_tiny(&data, &ckpt, &["--epochs", "0"]);
    let out = t.path().join("ev");
    let stdout = ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--horizon", "3", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for f in ["white_noise", "sine", "square", "gaussian", "triangle", "sawtooth", "pulse", "overall"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{f},"))), "{f}");
        assert!(stdout.contains(f));
    }
    assert_eq!(csv.lines().next().unwrap(), "family,count,loss1,loss2,loss3,loss4,loss5,total");
}

#[test]
fn rollout_shape_and_identity_wired_prediction() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let ckpt = t.path().join("m.kaec");
    train_tiny(&data, &ckpt, &["--epochs", "0"]);
    let out = t.path().join("ro");
    ok(&["rollout", "--ckpt", s(&ckpt), "--data", s(&data), "--ic-family", "sine", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("rollout.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.len() == 1 + 2 * 32));
    // K = I at initialization: every predicted row equals the reconstruction at t = 0
    for r in &rows {
        assert_eq!(&r[33..], &rows[0][33..]);
    }
    let svg = fs::read_to_string(out.join("rollout.svg")).unwrap();
    assert!(svg.contains("Exact solution") && svg.contains("Network prediction"));
    assert!(svg.contains("#d62728") && svg.contains("#1f4e9c"));
    // held-out initial condition from a seed
    ok(&["rollout", "--ckpt", s(&ckpt), "--data", s(&data), "--seed", "12345", "--out", s(&out)]);
    // family outside the split
    assert_eq!(
        code(&[
            "rollout",
            "--ckpt",
            s(&ckpt),
            "--data",
            s(&data),
            "--split",
            "train",
            "--ic-family",
            "pulse",
            "--out",
            s(&out)
        ]),
        2
    );
}

#[test]
fn eig_outputs_and_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let ckpt = t.path().join("m.kaec");
    ok(&["train", "--data", s(&data), "--ckpt", s(&ckpt), "--epochs", "0", "--quiet"]);
    let out = t.path().join("eig");
    ok(&["eig", "--ckpt", s(&ckpt), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
    assert!(out.join("spectrum.svg").exists());
    assert_eq!(code(&["eig", "--ckpt", s(&t.path().join("none.kaec")), "--out", s(&out)]), 3);
    let bad = t.path().join("bad.kaec");
    fs::write(&bad, b"KAEC garbage").unwrap();
    assert_eq!(code(&["eig", "--ckpt", s(&bad), "--out", s(&out)]), 3);
}

#[test]
fn bench_heads_rows_and_flops() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let out = t.path().join("bench");
    ok(&[
        "bench-heads",
        "--data",
        s(&data),
        "--heads",
        "1,2,4,8",
        "--d-model",
        "8",
        "--ff-width",
        "16",
        "--rank",
        "5",
        "--batch",
        "2",
        "--horizon",
        "3",
        "--repeats",
        "2",
        "--out",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("bench_heads.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "heads,median_ms,loss,attn_flops,attn_flops_counted");
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["1", "2", "4", "8"]);
    for r in &rows {
        assert_eq!(r[3], r[4]);
    }
    assert!(fs::read_to_string(out.join("bench_heads.svg")).unwrap().contains("number of heads"));
    assert_eq!(code(&["bench-heads", "--data", s(&data), "--heads", "3", "--d-model", "8", "--out", s(&out)]), 2);
}

#[test]
fn bench_heads_short_training_mode() {
    let t = tempfile::tempdir().unwrap();
    let data = small_data(t.path());
    let out = t.path().join("bench");
    ok(&[
        "bench-heads",
        "--data",
        s(&data),
        "--heads",
        "2,4",
        "--d-model",
        "8",
        "--ff-width",
        "16",
        "--rank",
        "5",
        "--batch",
        "2",
        "--horizon",
        "3",
        "--repeats",
        "1",
        "--train-epochs",
        "2",
        "--train-count",
        "3",
        "--out",
        s(&out),
    ]);
    let svg = fs::read_to_string(out.join("bench_heads.svg")).unwrap();
    assert!(svg.contains("desk-scale"));
}

fn compare(pde: &str, dir: &Path) -> String {
    let mut args = vec![
        "compare-blocks",
        "--pde",
        pde,
        "--train",
        "3",
        "--val",
        "3",
        "--n",
        "32",
        "--steps",
        "8",
        "--epochs",
        "2",
        "--horizon",
        "3",
        "--out",
        s(dir),
        "--quiet",
    ];
    args.extend_from_slice(&TINY);
    ok(&args)
}

#[test]
fn compare_blocks_pairs_and_footer() {
    let t = tempfile::tempdir().unwrap();
    let b = t.path().join("burgers");
    let out = compare("burgers", &b);
    assert!(out.contains("TransRes Block") && out.contains("DenseRes Block"));
    let md = fs::read_to_string(b.join("comparison.md")).unwrap();
    assert!(md.contains("1.944e-2") && md.contains("2.003e-2"));
    assert!(b.join("denseres.history.csv").exists() && b.join("transres.history.csv").exists());
    let svg = fs::read_to_string(b.join("comparison.svg")).unwrap();
    assert!(svg.contains("last 100 epochs"));

    let k = t.path().join("ks");
    let out = compare("ks", &k);
    assert!(out.contains("ConvRes Block"));
    let md = fs::read_to_string(k.join("comparison.md")).unwrap();
    assert!(md.contains("8.433e-3") && md.contains("1.012e-2"));

    // identical seeds: the same run twice gives the same checkpoints
    let k2 = t.path().join("ks2");
    compare("ks", &k2);
    for f in ["transres.kaec", "convres.kaec"] {
        assert_eq!(fs::read(k.join(f)).unwrap(), fs::read(k2.join(f)).unwrap(), "{f}");
    }
    assert_eq!(code(&["compare-blocks", "--pde", "fisher", "--out", s(&k2)]), 2);
}

#[test]
fn invalid_thread_setting_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_kae"))
        .args(["eig", "--ckpt", "x", "--out", "y"])
        .env("KAE_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
