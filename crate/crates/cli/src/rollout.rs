use std::fmt::Write as _;

use kae_core::dataset::Split;
use kae_core::model::Model;
use kae_core::numcore::Tensor;
use kae_core::pde::{IcFamily, Trajectory};
use kae_core::report::{num, write_text};
use kae_core::{Error, Result};

use crate::config::Resolver;
use crate::data::{create_dir, load_manifest, load_split};
use crate::plots;
use crate::RolloutArgs;

/// ‖a − b‖₂ / ‖b‖₂, or the plain norm of the difference when `b` vanishes.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

pub fn rollout(a: RolloutArgs) -> Result<()> {
    let mut r = Resolver::new("rollout", a.config.as_deref())?;
    let ckpt = r.require_path("ckpt", a.ckpt)?;
    let data = r.require_path("data", a.data)?;
    let split = r.get("split", a.split, Split::Test)?;
    let family = r.get("ic_family", a.ic_family, IcFamily::Sine)?;
    let seed = r.opt("seed", a.seed)?;
    let index = if seed.is_none() { r.get("index", a.index, 0usize)? } else { 0 };
    let out = r.require_path("out", a.out)?;
    r.finish()?;

    if !split.families().contains(&family) {
        return Err(Error::Config(format!("family {family} is not part of the {split} split")));
    }
    let model = Model::load_checkpoint(&ckpt)?;
    let m = load_manifest(&data)?;
    if model.config().n != m.grid.n {
        return Err(Error::Config(format!("checkpoint expects n = {}, data has n = {}", model.config().n, m.grid.n)));
    }
    let traj = match seed {
        Some(s) => Trajectory::generate(&m.pde, &m.grid, family, s, &m.ic_ranges, m.steps, m.dt)?,
        None => {
            let sub = load_split(&data, &m, split)?.filter_family(family);
            if sub.is_empty() {
                return Err(Error::Config(format!("no {family} trajectories in the {split} split")));
            }
            sub.trajectories.get(index).cloned().ok_or_else(|| {
                Error::Config(format!("index {index} out of range ({} {family} trajectories)", sub.len()))
            })?
        }
    };
    let reference = &traj.states;
    let (steps, n) = (reference.rows(), reference.cols());
    let u0 = Tensor::vector(reference.row(0).to_vec())?;
    let pred = model.predict_rollout(&u0, steps - 1)?;

    let mut csv = String::from("t");
    for tag in ["ref", "pred"] {
        for i in 0..n {
            let _ = write!(csv, ",{tag}_{i}");
        }
    }
    csv.push('\n');
    let mut err_csv = String::from("t,rel_l2\n");
    for k in 0..steps {
        let t = k as f64 * traj.dt;
        csv.push_str(&num(t));
        for v in reference.row(k).iter().chain(pred.row(k)) {
            csv.push(',');
            csv.push_str(&num(*v));
        }
        csv.push('\n');
        let _ = writeln!(err_csv, "{},{}", num(t), num(relative_l2(pred.row(k), reference.row(k))));
    }
    create_dir(&out)?;
    write_text(&out.join("rollout.csv"), &csv)?;
    write_text(&out.join("rollout_error.csv"), &err_csv)?;
    let x = m.grid.points();
    let t_end = ((steps - 1) as f64 * traj.dt * 1e9).round() / 1e9;
    write_text(&out.join("rollout.svg"), &plots::rollout_svg(&x, reference, &pred, t_end, family.name()))?;
    r.write(&out.join("config.txt"))?;
    let final_err = relative_l2(pred.row(steps - 1), reference.row(steps - 1));
    println!("{family} rollout, seed {}: relative L2 error {:.6e} at t = {t_end}", traj.seed, final_err);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_l2(&[1.0, 1.0], &[1.0, 1.0]), 0.0);
        assert_eq!(relative_l2(&[3.0, 4.0], &[0.0, 0.0]), 5.0);
        assert!((relative_l2(&[1.1, 0.0], &[1.0, 0.0]) - 0.1).abs() < 1e-12);
    }
}
