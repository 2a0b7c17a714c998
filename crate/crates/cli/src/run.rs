use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use kae_core::dataset::{Dataset, Split};
use kae_core::model::{BlockKind, Model, ModelConfig};
use kae_core::report::{num, write_text};
use kae_core::spectral::spectrum_report;
use kae_core::training::{
    self, evaluate, write_history_csv, AdamConfig, LossReport, TrainConfig, TrainOutcome, TrainStatus, LOSS_NAMES,
};
use kae_core::{Error, Result};

use crate::config::Resolver;
use crate::data::{create_dir, load_manifest, load_split};
use crate::{EigArgs, EvalArgs, ModelArgs, OptimArgs, TrainArgs};

pub fn resolve_model(r: &mut Resolver, m: &ModelArgs, n: usize, block: BlockKind) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let cfg = ModelConfig {
        n,
        block,
        heads: r.get("heads", m.heads, d.heads)?,
        r: r.get("rank", m.rank, d.r)?,
        d_model: r.get("d_model", m.d_model, d.d_model)?,
        ff_width: r.get("ff_width", m.ff_width, d.ff_width)?,
        depth: r.get("depth", m.depth, d.depth)?,
        seed: r.get("model_seed", m.model_seed, d.seed)?,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

pub struct Limits {
    pub train: usize,
    pub val: usize,
}

impl Limits {
    pub fn apply(n: usize, ds: Dataset) -> Dataset {
        if n == 0 {
            ds
        } else {
            ds.take(n)
        }
    }
}

pub fn resolve_optim(r: &mut Resolver, o: &OptimArgs, default_epochs: usize) -> Result<(TrainConfig, Limits)> {
    let d = TrainConfig::default();
    let a = AdamConfig::default();
    let clip = r.get("clip_norm", o.clip_norm, d.clip_norm.unwrap_or(0.0))?;
    let budget = r.get("time_budget_min", o.time_budget_min, 0.0f64)?;
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::Config(format!("time_budget_min must be ≥ 0, got {budget}")));
    }
    let cfg = TrainConfig {
        epochs: r.get("epochs", o.epochs, default_epochs)?,
        batch_size: r.get("batch", o.batch, d.batch_size)?,
        horizon: r.get("horizon", o.horizon, d.horizon)?,
        adam: AdamConfig { lr: r.get("lr", o.lr, a.lr)?, ..a },
        clip_norm: (clip > 0.0).then_some(clip),
        checkpoint_every: r.get("checkpoint_every", o.checkpoint_every, 0usize)?,
        seed: r.get("seed", o.seed, d.seed)?,
        time_budget: (budget > 0.0).then(|| Duration::from_secs_f64(budget * 60.0)),
    };
    let limits =
        Limits { train: r.get("train_limit", o.train_limit, 0usize)?, val: r.get("val_limit", o.val_limit, 0usize)? };
    Ok((cfg, limits))
}

/// `dir/stem.suffix` for a checkpoint at `dir/stem.ext`.
pub fn sibling(ckpt: &Path, suffix: &str) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    ckpt.with_file_name(format!("{stem}.{suffix}"))
}

fn status_text(s: &TrainStatus) -> String {
    match s {
        TrainStatus::Completed => "completed".into(),
        TrainStatus::BudgetExhausted { epoch } => format!("budget_exhausted_in_epoch_{epoch}"),
        TrainStatus::Diverged { epoch, .. } => format!("diverged_in_epoch_{epoch}"),
    }
}

fn last(history: &[LossReport], split: Split) -> Option<&LossReport> {
    history.iter().rev().find(|r| r.split == split)
}

/// Trains, then writes the checkpoint, best checkpoint, history and a summary
/// next to `ckpt`. Divergence is reported as a training error after the last
/// good parameters are saved.
pub fn run_training(
    model: Model,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    ckpt: &Path,
    label: &str,
    quiet: bool,
) -> Result<TrainOutcome> {
    if let Some(dir) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let outcome = training::train(model, train, val, cfg, |ev| {
        if !quiet {
            let v = ev.val.map_or(String::new(), |v| format!("  val {:.6e}", v.total));
            let mark = if ev.improved { " *" } else { "" };
            println!("{label}epoch {:>4}  train {:.6e}{v}{mark}", ev.epoch, ev.train.total);
        }
        if ev.checkpoint_due {
            ev.model.save_checkpoint(ckpt)?;
        }
        Ok(())
    })?;
    outcome.model.save_checkpoint(ckpt)?;
    outcome.best.save_checkpoint(&sibling(ckpt, "best.kaec"))?;
    write_history_csv(&outcome.history, &sibling(ckpt, "history.csv"))?;

    let epochs = last(&outcome.history, Split::Train).map_or(0, |r| r.epoch);
    let mut s = String::new();
    let _ = writeln!(s, "status = {}", status_text(&outcome.status));
    let _ = writeln!(s, "epochs_completed = {epochs}");
    let _ = writeln!(s, "best_epoch = {}", outcome.best_epoch);
    let _ = writeln!(s, "elapsed_s = {:.3}", outcome.elapsed.as_secs_f64());
    if let Some(t) = last(&outcome.history, Split::Train) {
        let _ = writeln!(s, "final_train_total = {}", num(t.total));
    }
    if let Some(v) = last(&outcome.history, Split::Val) {
        let _ = writeln!(s, "final_val_total = {}", num(v.total));
    }
    write_text(&sibling(ckpt, "summary.txt"), &s)?;

    match &outcome.status {
        TrainStatus::Diverged { epoch, reason } => Err(Error::Training(format!(
            "diverged in epoch {epoch} ({reason}); last good parameters kept in {}",
            ckpt.display()
        ))),
        TrainStatus::BudgetExhausted { epoch } => {
            eprintln!("{label}time budget exhausted during epoch {epoch}; {epochs} full epochs kept");
            Ok(outcome)
        }
        TrainStatus::Completed => Ok(outcome),
    }
}

fn check_n(model: &Model, ds: &Dataset) -> Result<()> {
    if model.config().n != ds.n() {
        return Err(Error::Config(format!("checkpoint expects n = {}, data has n = {}", model.config().n, ds.n())));
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut r = Resolver::new("train", a.config.as_deref())?;
    let data = r.require_path("data", a.data)?;
    let block = r.get("block", a.block, BlockKind::TransRes)?;
    let manifest = load_manifest(&data)?;
    let mcfg = resolve_model(&mut r, &a.model, manifest.grid.n, block)?;
    let (cfg, limits) = resolve_optim(&mut r, &a.optim, TrainConfig::default().epochs)?;
    let ckpt = r.require_path("ckpt", a.ckpt)?;
    r.finish()?;
    cfg.validate(manifest.steps)?;

    let train = Limits::apply(limits.train, load_split(&data, &manifest, Split::Train)?);
    let val = Limits::apply(limits.val, load_split(&data, &manifest, Split::Val)?);
    let model = Model::new(mcfg)?;
    if !a.quiet {
        println!(
            "{} model, {} parameters, {} train / {} val trajectories",
            block.label(),
            model.parameter_count(),
            train.len(),
            val.len()
        );
    }
    if let Some(dir) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    r.write(&sibling(&ckpt, "config.txt"))?;
    let val = (!val.is_empty()).then_some(&val);
    let out = run_training(model, &train, val, &cfg, &ckpt, "", a.quiet)?;
    println!(
        "{}: {} epochs, best epoch {}, {:.1} s; checkpoint {}",
        status_text(&out.status),
        last(&out.history, Split::Train).map_or(0, |r| r.epoch),
        out.best_epoch,
        out.elapsed.as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

fn report_row(name: &str, count: usize, r: &LossReport) -> String {
    let mut s = format!("{name},{count}");
    for v in r.losses.iter().chain([&r.total]) {
        s.push(',');
        s.push_str(&num(*v));
    }
    s
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut r = Resolver::new("eval", a.config.as_deref())?;
    let ckpt = r.require_path("ckpt", a.ckpt)?;
    let data = r.require_path("data", a.data)?;
    let split = r.get("split", a.split, Split::Test)?;
    let horizon = r.get("horizon", a.horizon, TrainConfig::default().horizon)?;
    let batch = r.get("batch", a.batch, TrainConfig::default().batch_size)?;
    let out = r.path("out", a.out)?;
    r.finish()?;

    let model = Model::load_checkpoint(&ckpt)?;
    let manifest = load_manifest(&data)?;
    let ds = load_split(&data, &manifest, split)?;
    if ds.is_empty() {
        return Err(Error::Config(format!("{split} split is empty")));
    }
    check_n(&model, &ds)?;

    let mut csv = format!("family,count,{},total\n", LOSS_NAMES.join(","));
    println!(
        "{:<12} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "family", "count", "loss1", "loss2", "loss3", "loss4", "loss5", "total"
    );
    let mut line = |name: &str, count: usize, rep: &LossReport| {
        let l = rep.losses;
        println!(
            "{name:<12} {count:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            l[0], l[1], l[2], l[3], l[4], rep.total
        );
        csv.push_str(&report_row(name, count, rep));
        csv.push('\n');
    };
    for f in split.families() {
        let sub = ds.filter_family(*f);
        if sub.is_empty() {
            continue;
        }
        line(f.name(), sub.len(), &evaluate(&model, &sub, horizon, batch)?);
    }
    line("overall", ds.len(), &evaluate(&model, &ds, horizon, batch)?);
    if let Some(out) = out {
        create_dir(&out)?;
        write_text(&out.join("eval.csv"), &csv)?;
        r.write(&out.join("config.txt"))?;
    }
    Ok(())
}

pub fn eig(a: EigArgs) -> Result<()> {
    let mut r = Resolver::new("eig", a.config.as_deref())?;
    let ckpt = r.require_path("ckpt", a.ckpt)?;
    let out = r.require_path("out", a.out)?;
    r.finish()?;
    let model = Model::load_checkpoint(&ckpt)?;
    let (spec, [csv, svg]) = spectrum_report(&model, &out)?;
    r.write(&out.join("config.txt"))?;
    println!(
        "{} eigenvalues, spectral radius {:.6}; wrote {} and {}",
        spec.len(),
        spec.spectral_radius(),
        csv.display(),
        svg.display()
    );
    Ok(())
}
