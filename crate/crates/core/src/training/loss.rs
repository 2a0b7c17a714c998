//! The five-term loss. Each ‖·‖ is a mean squared error; Losses 2 and 3 are
//! averaged over `p = 1..=P` of the per-`p` mean over all anchors.

use rayon::prelude::*;

use super::LossReport;
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::model::{Bound, Model, Side};
use crate::numcore::{GradBuffer, Tape, Tensor, Var};

/// Loss nodes of one trajectory `u[T×n]`, in order Loss 1..Loss 5.
pub fn sample_losses(model: &Model, tape: &mut Tape, b: &Bound, u: Var, horizon: usize) -> Result<[Var; 5]> {
    let t = tape.shape(u)[0];
    check_horizon(horizon, t)?;
    let v = model.outer_var(tape, b, Side::Encoder, u)?;
    let y = model.inner_encode_var(tape, b, v)?;
    let kt = model.koopman_t_var(tape, b)?;

    // z[p−1] holds Kᵖ·y_k for anchors k = 0..T−p
    let mut z = Vec::with_capacity(horizon);
    let mut prev = y;
    for p in 1..=horizon {
        let head = tape.slice_rows(prev, 0, t - p)?;
        prev = tape.matmul(head, kt)?;
        z.push(prev);
    }

    // one pass of η⁻¹ and one of ξ+I over every decoder input
    let mut latents = vec![y];
    latents.extend_from_slice(&z);
    let latents = tape.concat_rows(&latents)?;
    let w = model.inner_decode_var(tape, b, latents)?;
    let dec_in = tape.concat_rows(&[w, v])?;
    let dec = model.outer_var(tape, b, Side::Decoder, dec_in)?;

    let eta_inv_y = tape.slice_rows(w, 0, t)?;
    let recon = tape.slice_rows(dec, 0, t)?;
    let l1 = mse(tape, u, recon)?;

    let mut l2_terms = Vec::with_capacity(horizon);
    let mut l3_terms = Vec::with_capacity(horizon);
    let mut offset = t;
    for (i, &zp) in z.iter().enumerate() {
        let p = i + 1;
        let rows = t - p;
        let pred = tape.slice_rows(dec, offset, rows)?;
        offset += rows;
        let target = tape.slice_rows(u, p, rows)?;
        l2_terms.push(mse(tape, target, pred)?);
        let latent_target = tape.slice_rows(y, p, rows)?;
        l3_terms.push(mse(tape, latent_target, zp)?);
    }
    let l2 = mean(tape, &l2_terms)?;
    let l3 = mean(tape, &l3_terms)?;

    let outer = tape.slice_rows(dec, offset, t)?;
    let l4 = mse(tape, u, outer)?;
    let l5 = mse(tape, v, eta_inv_y)?;
    Ok([l1, l2, l3, l4, l5])
}

pub(crate) fn check_horizon(horizon: usize, steps: usize) -> Result<()> {
    if horizon == 0 || horizon >= steps {
        return Err(Error::Config(format!("horizon P={horizon} must satisfy 1 ≤ P ≤ T−1 with T={steps}")));
    }
    Ok(())
}

fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    Ok(tape.mean_square(d))
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

fn sum(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

fn check_batch(model: &Model, batch: &Tensor) -> Result<(usize, usize, usize)> {
    let s = batch.shape();
    if s.len() != 3 || s[2] != model.config().n || s[0] == 0 {
        return Err(Error::dim("batch", s, &[0, 0, model.config().n]));
    }
    Ok((s[0], s[1], s[2]))
}

fn sample(batch: &Tensor, i: usize, t: usize, n: usize) -> Tensor {
    Tensor::matrix(t, n, batch.data()[i * t * n..(i + 1) * t * n].to_vec()).expect("sample shape")
}

/// Forward-only evaluation of one trajectory.
fn sample_values(model: &Model, u: Tensor, horizon: usize) -> Result<[f64; 5]> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let x = tape.constant(u);
    let ls = sample_losses(model, &mut tape, &b, x, horizon)?;
    Ok(ls.map(|l| tape.value(l).data()[0]))
}

/// Batch-mean losses of `batch[b×T×n]`.
pub fn loss_components(model: &Model, batch: &Tensor, horizon: usize) -> Result<LossReport> {
    let (bs, t, n) = check_batch(model, batch)?;
    check_horizon(horizon, t)?;
    let per: Vec<[f64; 5]> = (0..bs)
        .into_par_iter()
        .map(|i| sample_values(model, sample(batch, i, t, n), horizon))
        .collect::<Result<_>>()?;
    Ok(LossReport::from_sums(&per, bs, Split::Train))
}

/// Batch-mean losses and the gradient of their total, reduced in sample order.
pub fn batch_gradients(model: &Model, batch: &Tensor, horizon: usize) -> Result<(LossReport, GradBuffer)> {
    let (bs, t, n) = check_batch(model, batch)?;
    check_horizon(horizon, t)?;
    let n_params = model.params().len();
    let per: Vec<([f64; 5], GradBuffer)> = (0..bs)
        .into_par_iter()
        .map(|i| {
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let x = tape.constant(sample(batch, i, t, n));
            let ls = sample_losses(model, &mut tape, &b, x, horizon)?;
            let total = sum(&mut tape, &ls)?;
            let total = tape.scale(total, 1.0 / bs as f64);
            let grads = tape.backward(total)?.param_buffer(&tape, n_params);
            Ok((ls.map(|l| tape.value(l).data()[0]), grads))
        })
        .collect::<Result<_>>()?;
    let mut acc = GradBuffer::zeros_like(model.params());
    let mut values = Vec::with_capacity(bs);
    for (v, g) in &per {
        acc.add_assign(g);
        values.push(*v);
    }
    Ok((LossReport::from_sums(&values, bs, Split::Train), acc))
}

/// The batch-mean total loss of `batch[b×T×n]` as one node, with every sample on `tape`.
pub fn batch_loss_var(model: &Model, tape: &mut Tape, b: &Bound, batch: &Tensor, horizon: usize) -> Result<Var> {
    let (bs, t, n) = check_batch(model, batch)?;
    let mut totals = Vec::with_capacity(bs);
    for i in 0..bs {
        let x = tape.constant(sample(batch, i, t, n));
        let ls = sample_losses(model, tape, b, x, horizon)?;
        totals.push(sum(tape, &ls)?);
    }
    mean(tape, &totals)
}
