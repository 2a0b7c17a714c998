//! Residual block bodies φ and ξ. Every block maps `[S×n]` to `[S×n]` and
//! ends in a zero-initialized projection, so `block + I` starts as the identity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BlockKind, ModelConfig};
use crate::error::Result;
use crate::numcore::{attention_core_flops, ParamId, ParamStore, Tape, Tensor, Var};

/// Seeded parameter factory; creation order fixes the random stream.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn add(&mut self, path: String, value: Tensor) -> Result<ParamId> {
        self.store.insert(path, value)
    }

    /// Glorot-uniform values for a weight with the given fans.
    pub fn xavier(&mut self, path: String, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| self.rng.random_range(-limit..limit)).collect();
        self.add(path, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn normal(&mut self, path: String, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).expect("positive std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| dist.sample(&mut self.rng)).collect();
        self.add(path, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn zeros(&mut self, path: String, shape: &[usize]) -> Result<ParamId> {
        self.add(path, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, path: String, shape: &[usize]) -> Result<ParamId> {
        let len = shape.iter().product();
        self.add(path, Tensor::new(shape.to_vec(), vec![1.0; len])?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    fn xavier(init: &mut Init, path: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: init.xavier(format!("{path}.w"), &[fan_in, fan_out], fan_in, fan_out)?,
            b: init.zeros(format!("{path}.b"), &[fan_out])?,
        })
    }

    fn zero(init: &mut Init, path: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: init.zeros(format!("{path}.w"), &[fan_in, fan_out])?,
            b: init.zeros(format!("{path}.b"), &[fan_out])?,
        })
    }

    fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, vars[self.w.index()], vars[self.b.index()])
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(init: &mut Init, path: &str, d: usize) -> Result<Self> {
        Ok(Self { gain: init.ones(format!("{path}.gain"), &[d])?, bias: init.zeros(format!("{path}.bias"), &[d])? })
    }

    fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, vars[self.gain.index()], vars[self.bias.index()], eps)
    }
}

#[derive(Clone, Debug)]
struct TransLayer {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln1: Norm,
    ff1: Dense,
    ff2: Dense,
    ln2: Norm,
}

#[derive(Clone, Debug)]
pub(crate) struct TransRes {
    embed_w: ParamId,
    embed_b: ParamId,
    pos: ParamId,
    layers: Vec<TransLayer>,
    readout: Dense,
    heads: usize,
    eps: f64,
}

/// Intermediate handles recorded during a forward pass.
#[derive(Default)]
pub(crate) struct Trace {
    /// `(q, k)` of each attention layer.
    pub attention: Vec<(Var, Var)>,
    /// Counted FLOPs from the query projection through the output projection.
    pub attention_flops: u64,
}

impl TransRes {
    fn new(cfg: &ModelConfig, p: &str, init: &mut Init) -> Result<Self> {
        let (n, d, ff) = (cfg.n, cfg.d_model, cfg.ff_width);
        let embed_w = init.xavier(format!("{p}.embed.w"), &[d], 1, d)?;
        let embed_b = init.zeros(format!("{p}.embed.b"), &[d])?;
        let pos = init.normal(format!("{p}.pos"), &[n, d], 0.02)?;
        let layers = (0..cfg.depth)
            .map(|l| {
                let lp = format!("{p}.l{l}");
                Ok(TransLayer {
                    q: Dense::xavier(init, &format!("{lp}.attn.q"), d, d)?,
                    k: Dense::xavier(init, &format!("{lp}.attn.k"), d, d)?,
                    v: Dense::xavier(init, &format!("{lp}.attn.v"), d, d)?,
                    o: Dense::xavier(init, &format!("{lp}.attn.o"), d, d)?,
                    ln1: Norm::new(init, &format!("{lp}.ln1"), d)?,
                    ff1: Dense::xavier(init, &format!("{lp}.ff1"), d, ff)?,
                    ff2: Dense::xavier(init, &format!("{lp}.ff2"), ff, d)?,
                    ln2: Norm::new(init, &format!("{lp}.ln2"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embed_w,
            embed_b,
            pos,
            layers,
            readout: Dense::zero(init, &format!("{p}.readout"), d, 1)?,
            heads: cfg.heads,
            eps: cfg.ln_eps,
        })
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, trace: &mut Trace) -> Result<Var> {
        let (s, n) = (tape.shape(x)[0], tape.shape(x)[1]);
        let at = |id: ParamId| vars[id.index()];
        let mut h = tape.token_embed(x, at(self.embed_w), at(self.embed_b), at(self.pos))?;
        for layer in &self.layers {
            let before = tape.flop_count();
            let q = layer.q.apply(tape, vars, h)?;
            let k = layer.k.apply(tape, vars, h)?;
            let v = layer.v.apply(tape, vars, h)?;
            let a = tape.attention(q, k, v, s, self.heads)?;
            let o = layer.o.apply(tape, vars, a)?;
            trace.attention_flops += tape.flop_count() - before;
            trace.attention.push((q, k));
            let r = tape.add(h, o)?;
            let h1 = layer.ln1.apply(tape, vars, r, self.eps)?;
            let f = layer.ff1.apply(tape, vars, h1)?;
            let f = tape.relu(f);
            let f = layer.ff2.apply(tape, vars, f)?;
            let r = tape.add(h1, f)?;
            h = layer.ln2.apply(tape, vars, r, self.eps)?;
        }
        let out = self.readout.apply(tape, vars, h)?;
        tape.reshape(out, vec![s, n])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DenseRes {
    layers: Vec<Dense>,
}

impl DenseRes {
    fn new(cfg: &ModelConfig, p: &str, init: &mut Init) -> Result<Self> {
        let n = cfg.n;
        let last = cfg.dense_layers - 1;
        let layers = (0..cfg.dense_layers)
            .map(|i| {
                let path = format!("{p}.dense{i}");
                if i == last {
                    Dense::zero(init, &path, n, n)
                } else {
                    Dense::xavier(init, &path, n, n)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(tape, vars, x)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvRes {
    convs: Vec<(ParamId, ParamId)>,
    head: Dense,
}

impl ConvRes {
    fn new(cfg: &ModelConfig, p: &str, init: &mut Init) -> Result<Self> {
        let w = cfg.conv_kernel;
        let mut cin = 1;
        let mut convs = Vec::new();
        for (i, &cout) in cfg.conv_channels.iter().enumerate() {
            let weight = init.xavier(format!("{p}.conv{i}.w"), &[cout, cin, w], cin * w, cout * w)?;
            let bias = init.zeros(format!("{p}.conv{i}.b"), &[cout])?;
            convs.push((weight, bias));
            cin = cout;
        }
        let flat = cin * cfg.n / cfg.conv_reduction();
        Ok(Self { convs, head: Dense::zero(init, &format!("{p}.head"), flat, cfg.n)? })
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (s, n) = (tape.shape(x)[0], tape.shape(x)[1]);
        let mut h = tape.reshape(x, vec![s, 1, n])?;
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            h = tape.conv1d(h, vars[w.index()], vars[b.index()])?;
            h = tape.relu(h);
            if i + 1 < self.convs.len() {
                h = tape.avg_pool(h)?;
            }
        }
        let flat: usize = tape.shape(h)[1..].iter().product();
        let h = tape.reshape(h, vec![s, flat])?;
        self.head.apply(tape, vars, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Block {
    TransRes(TransRes),
    DenseRes(DenseRes),
    ConvRes(ConvRes),
}

impl Block {
    pub fn new(cfg: &ModelConfig, prefix: &str, init: &mut Init) -> Result<Self> {
        Ok(match cfg.block {
            BlockKind::TransRes => Block::TransRes(TransRes::new(cfg, prefix, init)?),
            BlockKind::DenseRes => Block::DenseRes(DenseRes::new(cfg, prefix, init)?),
            BlockKind::ConvRes => Block::ConvRes(ConvRes::new(cfg, prefix, init)?),
        })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, trace: &mut Trace) -> Result<Var> {
        match self {
            Block::TransRes(b) => b.forward(tape, vars, x, trace),
            Block::DenseRes(b) => b.forward(tape, vars, x),
            Block::ConvRes(b) => b.forward(tape, vars, x),
        }
    }

    /// The zero-initialized final projection.
    pub fn output_projection(&self) -> [ParamId; 2] {
        let d = match self {
            Block::TransRes(b) => b.readout,
            Block::DenseRes(b) => *b.layers.last().expect("at least one dense layer"),
            Block::ConvRes(b) => b.head,
        };
        [d.w, d.b]
    }
}

/// Attention FLOPs of one TransRes block on `states` inputs, from the config alone:
/// four `d×d` projections over every token plus the attention core, per layer.
pub fn attention_flops(cfg: &ModelConfig, states: usize) -> u64 {
    if cfg.block != BlockKind::TransRes {
        return 0;
    }
    let rows = (states * cfg.n) as u64;
    let d = cfg.d_model as u64;
    let projections = 4 * (2 * rows * d * d + rows * d);
    cfg.depth as u64 * (projections + attention_core_flops(states, cfg.n, cfg.d_model, cfg.heads))
}
