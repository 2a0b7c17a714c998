//! Five-term loss, Adam and the epoch loop.

mod adam;
mod loss;

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use loss::{batch_gradients, batch_loss_var, loss_components, sample_losses};

use crate::dataset::{batch_indices, write_atomic, Dataset, Split, DEFAULT_BATCH};
use crate::error::{Error, Result};
use crate::model::Model;

pub const LOSS_NAMES: [&str; 5] = ["loss1", "loss2", "loss3", "loss4", "loss5"];

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub losses: [f64; 5],
    pub total: f64,
    pub epoch: usize,
    pub split: Split,
    /// Milliseconds since training started.
    pub wall_ms: f64,
}

impl LossReport {
    pub fn new(losses: [f64; 5], epoch: usize, split: Split) -> Self {
        Self { losses, total: losses.iter().sum(), epoch, split, wall_ms: 0.0 }
    }

    /// Mean over `count` samples of the per-sample loss vectors.
    pub(crate) fn from_sums(per_sample: &[[f64; 5]], count: usize, split: Split) -> Self {
        let mut acc = [0.0; 5];
        for s in per_sample {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
        }
        Self::new(acc.map(|a| a / count as f64), 0, split)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.losses.iter().all(|l| l.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub horizon: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Epoch interval of the checkpoint callback flag; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Wall-clock limit checked after every batch.
    #[serde(skip)]
    pub time_budget: Option<Duration>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH,
            epochs: 700,
            horizon: 8,
            adam: AdamConfig::default(),
            clip_norm: Some(10.0),
            checkpoint_every: 0,
            seed: 0,
            time_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        loss::check_horizon(self.horizon, steps)?;
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config(format!("invalid optimizer settings {:?}", self.adam)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// The time budget ran out during `epoch` (1-based); that epoch is not in the history.
    BudgetExhausted {
        epoch: usize,
    },
    /// A non-finite loss or gradient appeared during `epoch`; the model is the last good one.
    Diverged {
        epoch: usize,
        reason: String,
    },
}

pub struct TrainOutcome {
    /// Final parameters, or the last good ones after divergence.
    pub model: Model,
    /// Parameters with the lowest validation total (training total without validation data).
    pub best: Model,
    pub best_epoch: usize,
    pub history: Vec<LossReport>,
    pub status: TrainStatus,
    pub elapsed: Duration,
}

/// What the epoch callback sees.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub train: &'a LossReport,
    pub val: Option<&'a LossReport>,
    pub model: &'a Model,
    pub improved: bool,
    /// True on multiples of `checkpoint_every`.
    pub checkpoint_due: bool,
}

/// Mean losses over a whole dataset, evaluated in chunks of `batch_size`.
pub fn evaluate(model: &Model, data: &Dataset, horizon: usize, batch_size: usize) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let mut acc = [0.0; 5];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let r = loss_components(model, &data.stack(chunk)?, horizon)?;
        for (a, l) in acc.iter_mut().zip(r.losses) {
            *a += l * chunk.len() as f64;
        }
    }
    Ok(LossReport::new(acc.map(|a| a / data.len() as f64), 0, Split::Val))
}

/// One optimizer step on `batch`; returns the batch losses before the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &crate::numcore::Tensor,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let (report, grads) = batch_gradients(model, batch, cfg.horizon)?;
    if !report.is_finite() {
        return Err(Error::Training(format!("non-finite loss {:?}", report.losses)));
    }
    let store = model.params_mut();
    store.zero_grads();
    store.accumulate(&grads)?;
    if let Some(c) = cfg.clip_norm {
        let norm = store.grad_norm();
        if norm > c {
            store.scale_grads(c / norm);
        }
    }
    adam.step(store)?;
    Ok(report)
}

/// Trains `model` for `cfg.epochs` epochs over shuffled batches of `train`.
///
/// The training report of an epoch is the sample-weighted mean of its batch
/// losses; the validation report is evaluated after the epoch's last update.
pub fn train(
    mut model: Model,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochEvent) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(train.steps)?;
    if train.n() != model.config().n {
        return Err(Error::Config(format!("dataset n={} does not match model n={}", train.n(), model.config().n)));
    }
    if let Some(v) = val {
        if v.n() != train.n() || v.steps != train.steps {
            return Err(Error::Config("validation split shape differs from training split".into()));
        }
    }
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(model.params(), cfg.adam);
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_total = f64::INFINITY;
    let mut last_good = model.clone();
    let mut status = TrainStatus::Completed;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut acc = [0.0; 5];
        for idx in batch_indices(train.len(), cfg.batch_size, cfg.seed, epoch as u64)? {
            let batch = train.stack(&idx)?;
            match train_step(&mut model, &mut adam, &batch, cfg) {
                Ok(r) => {
                    for (a, l) in acc.iter_mut().zip(r.losses) {
                        *a += l * idx.len() as f64;
                    }
                }
                Err(Error::Training(reason)) => {
                    status = TrainStatus::Diverged { epoch, reason };
                    model = last_good.clone();
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if cfg.time_budget.is_some_and(|b| start.elapsed() > b) {
                status = TrainStatus::BudgetExhausted { epoch };
                break 'epochs;
            }
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let mut tr = LossReport::new(acc.map(|a| a / train.len() as f64), epoch, Split::Train);
        tr.wall_ms = wall_ms;
        let va = match val.filter(|v| !v.is_empty()) {
            Some(v) => {
                let mut r = evaluate(&model, v, cfg.horizon, cfg.batch_size)?;
                r.epoch = epoch;
                r.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                Some(r)
            }
            None => None,
        };
        let score = va.as_ref().unwrap_or(&tr);
        if !score.is_finite() || !tr.is_finite() {
            status = TrainStatus::Diverged { epoch, reason: format!("non-finite epoch loss {}", score.total) };
            model = last_good.clone();
            break;
        }
        let improved = score.total < best_total;
        if improved {
            best_total = score.total;
            best = model.clone();
            best_epoch = epoch;
        }
        history.push(tr.clone());
        if let Some(v) = &va {
            history.push(v.clone());
        }
        last_good = model.clone();
        on_epoch(&EpochEvent {
            epoch,
            train: &tr,
            val: va.as_ref(),
            model: &model,
            improved,
            checkpoint_due: cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0,
        })?;
    }
    Ok(TrainOutcome { model, best, best_epoch, history, status, elapsed: start.elapsed() })
}

/// Columns `epoch, split, loss1..loss5, total, wall_ms` with 17 significant digits.
pub fn history_csv(history: &[LossReport]) -> String {
    let mut out = String::from("epoch,split,loss1,loss2,loss3,loss4,loss5,total,wall_ms\n");
    for r in history {
        let _ = write!(out, "{},{}", r.epoch, r.split);
        for v in r.losses.iter().chain([&r.total, &r.wall_ms]) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_history_csv(history: &[LossReport], path: &Path) -> Result<()> {
    write_atomic(path, history_csv(history).as_bytes())
}
