//! The Koopman autoencoder: outer encoder φ+I, inner encoder η, latent
//! dynamics K, inner decoder η⁻¹ and outer decoder ξ+I.
//!
//! States are handled as rows: a batch of `S` states is an `[S×n]` matrix,
//! latents are `[S×r]`, and one latent step is `Z·Kᵀ`.

mod blocks;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use blocks::attention_flops;
pub use checkpoint::{from_checkpoint_bytes, to_checkpoint_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use blocks::{Block, Init, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    TransRes,
    DenseRes,
    ConvRes,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::TransRes => "transres",
            BlockKind::DenseRes => "denseres",
            BlockKind::ConvRes => "convres",
        }
    }

    /// Display label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            BlockKind::TransRes => "TransRes",
            BlockKind::DenseRes => "DenseRes",
            BlockKind::ConvRes => "ConvRes",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transres" => Ok(BlockKind::TransRes),
            "denseres" => Ok(BlockKind::DenseRes),
            "convres" => Ok(BlockKind::ConvRes),
            _ => Err(Error::Config(format!("unknown block {s:?} (expected transres, denseres or convres)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub r: usize,
    pub block: BlockKind,
    pub d_model: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Transformer layers per block.
    pub depth: usize,
    pub dense_layers: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub ln_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 128,
            r: 21,
            block: BlockKind::TransRes,
            d_model: 64,
            heads: 32,
            ff_width: 256,
            depth: 1,
            dense_layers: 4,
            conv_channels: vec![8, 16, 32, 64],
            conv_kernel: 4,
            ln_eps: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_block(block: BlockKind) -> Self {
        Self { block, ..Self::default() }
    }

    /// Spatial downsampling of the ConvRes stack (one pool between consecutive convolutions).
    pub(crate) fn conv_reduction(&self) -> usize {
        1 << self.conv_channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.r == 0 {
            return bad(format!("n and r must be positive (n={}, r={})", self.n, self.r));
        }
        if self.r >= self.n {
            return bad(format!("latent rank r={} must be below n={}", self.r, self.n));
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("layer-norm eps must be > 0, got {}", self.ln_eps));
        }
        match self.block {
            BlockKind::TransRes => {
                if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
                    return bad(format!("d_model={} is not divisible by heads={}", self.d_model, self.heads));
                }
                if self.ff_width == 0 || self.depth == 0 {
                    return bad("ff_width and depth must be positive".into());
                }
            }
            BlockKind::DenseRes => {
                if self.dense_layers == 0 {
                    return bad("DenseRes needs at least one layer".into());
                }
            }
            BlockKind::ConvRes => {
                if self.conv_channels.is_empty() || self.conv_channels.contains(&0) || self.conv_kernel == 0 {
                    return bad("ConvRes needs positive channel counts and kernel width".into());
                }
                if !self.n.is_multiple_of(self.conv_reduction()) {
                    return bad(format!(
                        "n={} is not divisible by the ConvRes pooling factor {}",
                        self.n,
                        self.conv_reduction()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Which outer block: φ (encoder side) or ξ (decoder side).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

#[derive(Clone, Debug)]
struct Layout {
    phi: Block,
    xi: Block,
    eta_w: ParamId,
    eta_b: ParamId,
    k: ParamId,
    eta_inv_w: ParamId,
    eta_inv_b: ParamId,
}

/// Parameters of a model bound to one tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps leaves already bound in store order, e.g. by [`crate::numcore::grad_check`].
    pub fn from_vars(vars: &[Var]) -> Self {
        Self { vars: vars.to_vec() }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Seeded initialization: Glorot-uniform weights, zero final block
    /// projections, η with orthonormal columns, η⁻¹ = ηᵀ, K = I.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init { store: &mut params, rng: ChaCha8Rng::seed_from_u64(config.seed) };
        let phi = Block::new(&config, "outer_enc", &mut init)?;
        let xi = Block::new(&config, "outer_dec", &mut init)?;
        let (n, r) = (config.n, config.r);
        let eta = orthonormal_columns(n, r, &mut init.rng)?;
        let eta_w = init.add("inner_enc.w".into(), eta.clone())?;
        let eta_b = init.zeros("inner_enc.b".into(), &[r])?;
        let k = init.add("koopman.k".into(), Tensor::identity(r))?;
        let eta_inv_w = init.add("inner_dec.w".into(), eta.transpose()?)?;
        let eta_inv_b = init.zeros("inner_dec.b".into(), &[n])?;
        Ok(Self { config, params, layout: Layout { phi, xi, eta_w, eta_b, k, eta_inv_w, eta_inv_b } })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn koopman(&self) -> &Tensor {
        self.params.value(self.layout.k)
    }

    pub fn set_koopman(&mut self, k: Tensor) -> Result<()> {
        self.params.set_value(self.layout.k, k)
    }

    /// Sets η to `w` (`[n×r]`) and η⁻¹ to `wᵀ`, with zero biases.
    pub fn set_inner_pair(&mut self, w: Tensor) -> Result<()> {
        let l = &self.layout;
        let wt = w.transpose()?;
        self.params.set_value(l.eta_w, w)?;
        self.params.set_value(l.eta_inv_w, wt)?;
        self.params.set_value(l.eta_b, Tensor::zeros(&[self.config.r]))?;
        self.params.set_value(l.eta_inv_b, Tensor::zeros(&[self.config.n]))
    }

    /// Paths of the zero-initialized final projections of φ and ξ.
    pub fn output_projection_paths(&self) -> Vec<String> {
        [&self.layout.phi, &self.layout.xi]
            .iter()
            .flat_map(|b| b.output_projection())
            .map(|id| self.params.get(id).path.clone())
            .collect()
    }

    // ---- tape-level building blocks ----

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound { vars: tape.bind(&self.params) }
    }

    fn block(&self, side: Side) -> &Block {
        match side {
            Side::Encoder => &self.layout.phi,
            Side::Decoder => &self.layout.xi,
        }
    }

    /// φ(x) or ξ(x) on `[S×n]` rows.
    pub fn block_var(&self, tape: &mut Tape, b: &Bound, side: Side, x: Var) -> Result<Var> {
        self.check_rows(tape.shape(x), self.config.n, "block")?;
        self.block(side).forward(tape, &b.vars, x, &mut Trace::default())
    }

    /// (φ+I)(x) or (ξ+I)(x) on `[S×n]` rows.
    pub fn outer_var(&self, tape: &mut Tape, b: &Bound, side: Side, x: Var) -> Result<Var> {
        let f = self.block_var(tape, b, side, x)?;
        tape.add(x, f)
    }

    /// η(v) on `[S×n]` rows, giving `[S×r]`.
    pub fn inner_encode_var(&self, tape: &mut Tape, b: &Bound, v: Var) -> Result<Var> {
        tape.linear(v, b.var(self.layout.eta_w), b.var(self.layout.eta_b))
    }

    /// η⁻¹(y) on `[S×r]` rows, giving `[S×n]`.
    pub fn inner_decode_var(&self, tape: &mut Tape, b: &Bound, y: Var) -> Result<Var> {
        tape.linear(y, b.var(self.layout.eta_inv_w), b.var(self.layout.eta_inv_b))
    }

    /// `Kᵀ`, the right factor of a row-form latent step.
    pub fn koopman_t_var(&self, tape: &mut Tape, b: &Bound) -> Result<Var> {
        tape.transpose(b.var(self.layout.k))
    }

    fn check_rows(&self, shape: &[usize], width: usize, op: &'static str) -> Result<()> {
        if shape.len() != 2 || shape[1] != width {
            return Err(Error::dim(op, shape, &[0, width]));
        }
        Ok(())
    }

    /// Accepts `[w]` or `[S×w]`; returns the row matrix and whether the input was a vector.
    fn as_rows(&self, u: &Tensor, width: usize, op: &'static str) -> Result<(Tensor, bool)> {
        match u.shape() {
            [w] if *w == width => Ok((u.reshape(vec![1, width])?, true)),
            [_, w] if *w == width => Ok((u.clone(), false)),
            s => Err(Error::dim(op, s, &[width])),
        }
    }

    fn run(
        &self,
        u: &Tensor,
        width: usize,
        out_width: usize,
        op: &'static str,
        f: impl FnOnce(&mut Tape, &Bound, Var) -> Result<Var>,
    ) -> Result<Tensor> {
        let (rows, vector) = self.as_rows(u, width, op)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let x = tape.constant(rows);
        let y = f(&mut tape, &b, x)?;
        let out = tape.value(y).clone();
        if vector {
            out.reshape(vec![out_width])
        } else {
            Ok(out)
        }
    }

    // ---- tensor-level API; every function accepts a state `[n]` or rows `[S×n]` ----

    /// (φ+I)(u).
    pub fn outer_encode(&self, u: &Tensor) -> Result<Tensor> {
        let n = self.config.n;
        self.run(u, n, n, "outer_encode", |t, b, x| self.outer_var(t, b, Side::Encoder, x))
    }

    /// (ξ+I)(v).
    pub fn outer_decode(&self, v: &Tensor) -> Result<Tensor> {
        let n = self.config.n;
        self.run(v, n, n, "outer_decode", |t, b, x| self.outer_var(t, b, Side::Decoder, x))
    }

    /// φ(u) alone, whatever the block kind.
    pub fn block_output(&self, side: Side, u: &Tensor) -> Result<Tensor> {
        let n = self.config.n;
        self.run(u, n, n, "block", |t, b, x| self.block_var(t, b, side, x))
    }

    /// φ(u) for a TransRes model.
    pub fn transres_block(&self, u: &Tensor) -> Result<Tensor> {
        if self.config.block != BlockKind::TransRes {
            return Err(Error::Config(format!("model uses {} blocks, not transres", self.config.block)));
        }
        self.block_output(Side::Encoder, u)
    }

    /// Attention weights `[n×n]` of φ's first layer, head `head`, for state `u`.
    pub fn attention_map(&self, u: &Tensor, head: usize) -> Result<Tensor> {
        if self.config.block != BlockKind::TransRes {
            return Err(Error::Config("attention maps need a transres model".into()));
        }
        let (rows, _) = self.as_rows(u, self.config.n, "attention_map")?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let x = tape.constant(rows.clone());
        let mut trace = Trace::default();
        self.layout.phi.forward(&mut tape, &b.vars, x, &mut trace)?;
        let (q, k) = trace.attention[0];
        tape.attention_weights(q, k, rows.rows(), self.config.heads, 0, head)
    }

    /// FLOPs counted by the tape over the attention sections of one φ pass on `states` rows.
    pub fn counted_attention_flops(&self, states: usize) -> Result<u64> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[states, self.config.n]));
        let mut trace = Trace::default();
        self.layout.phi.forward(&mut tape, &b.vars, x, &mut trace)?;
        Ok(trace.attention_flops)
    }

    /// χ(u) = η((φ+I)(u)).
    pub fn encode(&self, u: &Tensor) -> Result<Tensor> {
        let (n, r) = (self.config.n, self.config.r);
        self.run(u, n, r, "encode", |t, b, x| {
            let v = self.outer_var(t, b, Side::Encoder, x)?;
            self.inner_encode_var(t, b, v)
        })
    }

    /// χ⁻¹(y) = (ξ+I)(η⁻¹(y)).
    pub fn decode(&self, y: &Tensor) -> Result<Tensor> {
        let (n, r) = (self.config.n, self.config.r);
        self.run(y, r, n, "decode", |t, b, x| {
            let w = self.inner_decode_var(t, b, x)?;
            self.outer_var(t, b, Side::Decoder, w)
        })
    }

    /// Kᵖ·y by repeated multiplication.
    pub fn advance(&self, y: &Tensor, p: i64) -> Result<Tensor> {
        if p < 0 {
            return Err(Error::Parameter(format!("advance needs p ≥ 0, got {p}")));
        }
        let r = self.config.r;
        let (mut rows, vector) = self.as_rows(y, r, "advance")?;
        let kt = self.koopman().transpose()?;
        for _ in 0..p {
            rows = matmul(&rows, &kt)?;
        }
        if vector {
            rows.reshape(vec![r])
        } else {
            Ok(rows)
        }
    }

    /// Row `k` is χ⁻¹(Kᵏ χ(u₀)) for `k = 0..=steps`.
    pub fn predict_rollout(&self, u0: &Tensor, steps: usize) -> Result<Tensor> {
        let n = self.config.n;
        if u0.shape() != [n] {
            return Err(Error::dim("predict_rollout", u0.shape(), &[n]));
        }
        let mut y = self.encode(&u0.reshape(vec![1, n])?)?;
        let kt = self.koopman().transpose()?;
        let mut latents = y.to_vec();
        for _ in 0..steps {
            y = matmul(&y, &kt)?;
            latents.extend_from_slice(y.data());
        }
        self.decode(&Tensor::matrix(steps + 1, self.config.r, latents)?)
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let z = tape.matmul(x, y)?;
    Ok(tape.value(z).clone())
}

/// `[n×r]` with orthonormal columns: modified Gram-Schmidt, applied twice, on Gaussian columns.
fn orthonormal_columns(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let data = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    Tensor::matrix(n, r, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_columns_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthonormal_columns(16, 5, &mut rng).unwrap();
        let g = matmul(&q.transpose().unwrap(), &q).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g.at(i, j) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn config_checks() {
        assert!(ModelConfig::default().validate().is_ok());
        let c = ModelConfig { heads: 3, ..ModelConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig { r: 128, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { n: 36, ..ModelConfig::with_block(BlockKind::ConvRes) };
        assert!(c.validate().is_err());
        assert_eq!("DenseRes".parse::<BlockKind>().unwrap(), BlockKind::DenseRes);
    }
}
