use std::fmt::Write as _;

use kae_core::dataset::{DatasetManifest, Split, SplitCounts};
use kae_core::model::{BlockKind, Model};
use kae_core::pde::{Grid, PdeKind, PdeSpec, DEFAULT_N, DEFAULT_STEPS};
use kae_core::report::{num, write_text};
use kae_core::training::{LossReport, TrainConfig};
use kae_core::{Error, Result};

use crate::config::Resolver;
use crate::data::{create_dir, generate_all, load_manifest, load_split};
use crate::plots;
use crate::run::{resolve_model, resolve_optim, run_training, Limits};
use crate::CompareArgs;

/// Published 700-epoch totals (training, validation) from 60,000-trajectory runs.
pub fn reference(pde: PdeKind) -> Option<[(BlockKind, f64, f64); 2]> {
    match pde {
        PdeKind::Burgers => {
            Some([(BlockKind::TransRes, 1.944e-2, 1.939e-2), (BlockKind::DenseRes, 2.003e-2, 2.036e-2)])
        }
        PdeKind::Ks => Some([(BlockKind::TransRes, 8.433e-3, 8.516e-3), (BlockKind::ConvRes, 1.012e-2, 1.004e-2)]),
        PdeKind::Fisher => None,
    }
}

fn final_total(history: &[LossReport], split: Split) -> f64 {
    history.iter().rev().find(|r| r.split == split).map_or(f64::NAN, |r| r.total)
}

fn sci(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3e}")
    } else {
        "n/a".into()
    }
}

pub fn table(pde: PdeKind, rows: &[(BlockKind, f64, f64)], note: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Loss metrics on {pde} ({note})\n");
    let _ = writeln!(s, "| Outer encoder/decoder | Training loss | Validation loss |");
    let _ = writeln!(s, "|---|---|---|");
    for (b, t, v) in rows {
        let _ = writeln!(s, "| {} Block | {} | {} |", b.label(), sci(*t), sci(*v));
    }
    if let Some(refs) = reference(pde) {
        let quoted: Vec<String> = refs
            .iter()
            .map(|(b, t, v)| format!("{} {} training / {} validation", b.label(), sci(*t), sci(*v)))
            .collect();
        let _ = writeln!(
            s,
            "\nReference (published, 60,000 trajectories, 700 epochs; not comparable to desk scale): {}.",
            quoted.join("; ")
        );
    }
    s
}

pub fn compare_blocks(a: CompareArgs) -> Result<()> {
    let mut r = Resolver::new("compare-blocks", a.config.as_deref())?;
    let pde = r.get("pde", a.pde, PdeKind::Burgers)?;
    let Some(refs) = reference(pde) else {
        return Err(Error::Config(format!("compare-blocks runs on burgers or ks, not {pde}")));
    };
    let data = r.path("data", a.data)?;
    let d = SplitCounts::default();
    let (counts, data_seed, gen_n, gen_steps) = if data.is_none() {
        let c = SplitCounts { train: r.get("train", a.train, d.train)?, val: r.get("val", a.val, d.val)?, test: 0 };
        let seed = r.get("data_seed", a.data_seed, 0u64)?;
        (c, seed, r.get("n", a.n, DEFAULT_N)?, r.get("steps", a.steps, DEFAULT_STEPS)?)
    } else {
        if a.train.is_some() || a.val.is_some() || a.data_seed.is_some() || a.n.is_some() || a.steps.is_some() {
            return Err(Error::Config(
                "--train, --val, --data-seed, --n and --steps only apply when --data is absent".into(),
            ));
        }
        (d, 0, DEFAULT_N, DEFAULT_STEPS)
    };
    let (cfg, limits) = resolve_optim(&mut r, &a.optim, TrainConfig::default().epochs)?;
    let out = r.require_path("out", a.out)?;

    let data_dir = match &data {
        Some(dir) => {
            let m = load_manifest(dir)?;
            if m.pde.kind() != pde {
                return Err(Error::Config(format!("{} holds {} data, expected {pde}", dir.display(), m.pde.kind())));
            }
            dir.clone()
        }
        None => out.join("data"),
    };
    let n = match &data {
        Some(_) => load_manifest(&data_dir)?.grid.n,
        None => gen_n,
    };
    let base = resolve_model(&mut r, &a.model, n, BlockKind::TransRes)?;
    r.finish()?;
    let other = refs[1].0;
    let mut alt = base.clone();
    alt.block = other;
    alt.validate()?;

    if data.is_none() {
        let mut m = DatasetManifest::new(PdeSpec::default_for(pde), Grid::for_pde(pde, n)?, counts, data_seed);
        m.steps = gen_steps;
        generate_all(&m, &data_dir, a.quiet)?;
    }
    let m = load_manifest(&data_dir)?;
    cfg.validate(m.steps)?;
    let train = Limits::apply(limits.train, load_split(&data_dir, &m, Split::Train)?);
    let val = Limits::apply(limits.val, load_split(&data_dir, &m, Split::Val)?);
    let val_ref = (!val.is_empty()).then_some(&val);
    create_dir(&out)?;
    r.write(&out.join("config.txt"))?;

    let mut histories = Vec::new();
    for mc in [base, alt] {
        let block = mc.block;
        let ckpt = out.join(format!("{}.kaec", block.name()));
        let label = format!("{} ", block.label());
        let o = run_training(Model::new(mc)?, &train, val_ref, &cfg, &ckpt, &label, a.quiet)?;
        histories.push((block, o.history));
    }

    let rows: Vec<(BlockKind, f64, f64)> =
        histories.iter().map(|(b, h)| (*b, final_total(h, Split::Train), final_total(h, Split::Val))).collect();
    let epochs = histories.iter().flat_map(|(_, h)| h.iter().map(|r| r.epoch)).max().unwrap_or(0);
    let note = format!("desk scale: {epochs} epochs, {} training / {} validation trajectories", train.len(), val.len());
    let md = table(pde, &rows, &note);
    let mut csv = String::from("block,train_total,val_total,reference_train,reference_val\n");
    for ((b, t, v), (_, rt, rv)) in rows.iter().zip(refs) {
        let _ = writeln!(csv, "{},{},{},{},{}", b.name(), num(*t), num(*v), num(rt), num(rv));
    }
    write_text(&out.join("comparison.md"), &md)?;
    write_text(&out.join("comparison.csv"), &csv)?;
    let curves: Vec<(&str, &str, &[LossReport])> =
        histories.iter().zip(["#1f4e9c", "#d62728"]).map(|((b, h), c)| (b.label(), c, h.as_slice())).collect();
    let title = format!("{} vs {} on {pde}", BlockKind::TransRes.label(), other.label());
    write_text(&out.join("comparison.svg"), &plots::compare_svg(&title, &curves))?;
    print!("{md}");
    Ok(())
}
