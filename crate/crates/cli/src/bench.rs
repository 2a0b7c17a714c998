use std::fmt::Write as _;
use std::time::Instant;

use kae_core::dataset::Split;
use kae_core::model::{attention_flops, BlockKind, Model, ModelConfig};
use kae_core::report::{num, write_text};
use kae_core::training::{self, loss_components, TrainConfig};
use kae_core::{Error, Result};

use crate::config::{parse_list, Resolver};
use crate::data::{create_dir, load_manifest, load_split};
use crate::plots;
use crate::BenchArgs;

pub const WARMUP: usize = 3;

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn bench_heads(a: BenchArgs) -> Result<()> {
    let mut r = Resolver::new("bench-heads", a.config.as_deref())?;
    let heads = parse_list("heads", &r.get("heads", a.heads, "2,4,8,16,32".to_string())?)?;
    let repeats = r.get("repeats", a.repeats, 5usize)?;
    let data = r.require_path("data", a.data)?;
    let d = ModelConfig::default();
    let rank = r.get("rank", a.rank, d.r)?;
    let d_model = r.get("d_model", a.d_model, d.d_model)?;
    let ff_width = r.get("ff_width", a.ff_width, d.ff_width)?;
    let depth = r.get("depth", a.depth, d.depth)?;
    let model_seed = r.get("model_seed", a.model_seed, d.seed)?;
    let batch = r.get("batch", a.batch, TrainConfig::default().batch_size)?;
    let horizon = r.get("horizon", a.horizon, TrainConfig::default().horizon)?;
    let train_epochs = r.get("train_epochs", a.train_epochs, 0usize)?;
    let train_count = r.get("train_count", a.train_count, 64usize)?;
    let out = r.require_path("out", a.out)?;
    r.finish()?;

    if heads.is_empty() || repeats == 0 || batch == 0 {
        return Err(Error::Config("bench-heads needs at least one head count, repeat and trajectory".into()));
    }
    let m = load_manifest(&data)?;
    let configs = heads
        .iter()
        .map(|&h| {
            let cfg = ModelConfig {
                n: m.grid.n,
                r: rank,
                block: BlockKind::TransRes,
                d_model,
                heads: h,
                ff_width,
                depth,
                seed: model_seed,
                ..ModelConfig::default()
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let train = load_split(&data, &m, Split::Train)?;
    if train.is_empty() {
        return Err(Error::Config("bench-heads needs a non-empty train split".into()));
    }
    let b = batch.min(train.len());
    let idx: Vec<usize> = (0..b).collect();
    let timing_batch = train.stack(&idx)?;
    let states = b * train.steps;
    let short = (train_epochs > 0).then(|| -> Result<_> {
        let val = load_split(&data, &m, Split::Val)?.take(train_count);
        Ok((train.take(train_count), val))
    });
    let short = short.transpose()?;
    let tcfg = TrainConfig { epochs: train_epochs, batch_size: batch, horizon, ..TrainConfig::default() };

    let mut csv = String::from("heads,median_ms,loss,attn_flops,attn_flops_counted\n");
    let mut rows = Vec::new();
    println!("{:>6} {:>12} {:>14} {:>16} {:>16}", "heads", "median_ms", "loss", "attn_flops", "counted");
    for cfg in configs {
        let mut model = Model::new(cfg.clone())?;
        let mut loss = None;
        if let Some((tr, va)) = &short {
            let val = (!va.is_empty()).then_some(va);
            let o = training::train(model, tr, val, &tcfg, |_| Ok(()))?;
            loss = o.history.iter().rev().find(|r| val.is_none() || r.split == Split::Val).map(|r| r.total);
            model = o.model;
        }
        let mut first = None;
        for _ in 0..WARMUP {
            let rep = loss_components(&model, &timing_batch, horizon)?;
            first.get_or_insert(rep.total);
        }
        let mut times: Vec<f64> = (0..repeats)
            .map(|_| {
                let t = Instant::now();
                loss_components(&model, &timing_batch, horizon).map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<_>>()?;
        let ms = median(&mut times);
        let loss = loss.or(first).unwrap_or(f64::NAN);
        let flops = attention_flops(&cfg, states);
        let counted = model.counted_attention_flops(states)?;
        println!("{:>6} {ms:>12.3} {loss:>14.6e} {flops:>16} {counted:>16}", cfg.heads);
        let _ = writeln!(csv, "{},{},{},{flops},{counted}", cfg.heads, num(ms), num(loss));
        rows.push((cfg.heads, ms, loss));
    }
    let label = if train_epochs > 0 {
        format!("loss: validation total after {train_epochs} desk-scale epochs on {train_count} trajectories; not comparable to fully trained models")
    } else {
        "loss: total loss of the untrained model on the timed batch".to_string()
    };
    create_dir(&out)?;
    write_text(&out.join("bench_heads.csv"), &csv)?;
    write_text(&out.join("bench_heads.svg"), &plots::bench_svg(&rows, &label))?;
    r.write(&out.join("config.txt"))?;
    println!("timings are machine-dependent; attention FLOPs are per pass over {states} states");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
