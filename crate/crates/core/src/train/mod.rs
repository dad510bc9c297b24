//! Adaptive physics-informed training and temporal decomposition.
//!
//! Each adaptivity iteration trains for `epochs` passes over the current
//! collocation set with a fresh AdamW state and cosine schedule, then redraws
//! the spatial points from the model just trained.

mod collocation;
mod optim;
mod temporal;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowConfig, FlowError, NonlinearConfig, TkrNet, Trainable};
use crate::loss::{self, LossError, LossVariant};
use crate::systems::{SystemSpec, VectorField};

pub use collocation::{init_collocation, interval_time_grid, make_time_grid, resample_collocation, CollocationSet};
pub use optim::{AdamW, AdamWConfig, CosineSchedule};
pub use temporal::{equal_breaks, stacked_sample, train_temporal_choice1, train_temporal_choice2};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at interval {interval}, iteration {iteration}, epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        interval: usize,
        iteration: usize,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("{0}")]
    Observer(String),
}

/// Independent random streams derived from one root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Collocation = 2,
    Shuffle = 3,
    Resample = 4,
    Interface = 5,
    Evaluation = 6,
}

pub fn rng_for(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | index);
    rng
}

fn default_alpha() -> f64 {
    0.6
}

/// Network shape shared by every model a run builds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub blocks: usize,
    pub pairs_per_block: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub nonlinear: Option<NonlinearConfig>,
}

impl Architecture {
    pub fn flow_config(&self, dim: usize, origin: f64, horizon: f64, seed: u64) -> FlowConfig {
        FlowConfig {
            dim,
            blocks: self.blocks,
            pairs_per_block: self.pairs_per_block,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
            alpha: self.alpha,
            nonlinear: self.nonlinear.clone(),
            horizon,
            origin,
            origin_input: false,
            seed,
        }
    }
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Architecture,
    /// `N_E`.
    pub epochs: usize,
    /// `N_adaptive`.
    pub adaptive_iters: usize,
    /// `N_b`.
    pub batches: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_min: f64,
    #[serde(default)]
    pub adamw: AdamWConfig,
    pub seed: u64,
    #[serde(default)]
    pub loss: LossVariant,
    /// `J`, time levels per (sub-)interval.
    pub time_steps: usize,
    /// `M`, spatial points per time level.
    pub points_per_step: usize,
    pub t_final: f64,
    #[serde(default = "one")]
    pub sub_intervals: usize,
    /// Weight of the interface cross-entropy under the first decomposition.
    #[serde(default = "unit")]
    pub interface_weight: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        for (name, v) in [
            ("epochs", self.epochs),
            ("adaptive_iters", self.adaptive_iters),
            ("batches", self.batches),
            ("time_steps", self.time_steps),
            ("points_per_step", self.points_per_step),
            ("sub_intervals", self.sub_intervals),
        ] {
            if v == 0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad("need 0 <= lr_min <= lr with lr > 0");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be positive");
        }
        if !(self.interface_weight >= 0.0) {
            return bad("interface_weight must be non-negative");
        }
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.adamw;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && weight_decay >= 0.0) {
            return bad("AdamW needs betas in [0, 1), eps > 0, weight_decay >= 0");
        }
        if self.batches > self.points_per_step * self.time_steps {
            return bad("more batches than collocation points");
        }
        Ok(())
    }
}

/// One optimisation step as logged to `metrics.csv`. Counters are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub interval: usize,
    pub iteration: usize,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    /// Interface cross-entropy part of `loss`, when present.
    pub interface: Option<f64>,
    pub lr: f64,
}

/// Hooks into the training loop.
pub trait Observer<M: ?Sized> {
    fn on_step(&mut self, _record: &StepRecord) {}

    /// Called after every adaptivity iteration with the model just trained.
    fn on_iteration(&mut self, _interval: usize, _iteration: usize, _model: &M) -> Result<(), TrainError> {
        Ok(())
    }
}

pub struct Silent;

impl<M: ?Sized> Observer<M> for Silent {}

#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    pub steps: Vec<StepRecord>,
}

/// Previous-model samples pinned at the left end of an interval.
pub(crate) struct Interface {
    pub set: CollocationSet,
    pub t: f64,
    pub weight: f64,
}

/// Algorithm body shared by every training entry point: `N_adaptive`
/// iterations of `N_E` epochs over `N_b` batches, resampling in between.
pub(crate) fn adaptive_loop<M, F, O>(
    model: &mut M,
    field: &F,
    mut set: CollocationSet,
    mut interface: Option<Interface>,
    cfg: &TrainConfig,
    variant: LossVariant,
    interval: usize,
    observer: &mut O,
) -> Result<Vec<StepRecord>, TrainError>
where
    M: Trainable,
    F: VectorField,
    O: Observer<M> + ?Sized,
{
    let mut log = Vec::with_capacity(cfg.adaptive_iters * cfg.epochs * cfg.batches);
    let times = set.times.clone();
    for k in 1..=cfg.adaptive_iters {
        let stream = ((interval as u64) << 16) | k as u64;
        let mut shuffle = rng_for(cfg.seed, Stream::Shuffle, stream);
        let n = model.params().len();
        let mut opt = AdamW::new(n, cfg.adamw);
        let schedule = CosineSchedule {
            lr_max: cfg.lr,
            lr_min: cfg.lr_min,
            total_steps: cfg.epochs * set.n_batches(),
        };
        let mut step = 0;
        for e in 1..=cfg.epochs {
            if e > 1 {
                set.shuffle(&mut shuffle);
                if let Some(i) = interface.as_mut() {
                    i.set.shuffle(&mut shuffle);
                }
            }
            for b in 0..set.n_batches() {
                let fail = |detail: String| TrainError::NonFinite {
                    interval,
                    iteration: k,
                    epoch: e,
                    batch: b + 1,
                    detail,
                };
                let (pts, ts) = set.batch(b);
                let (mut value, mut grad) = match loss::batch_loss(model, field, &pts, &ts, variant) {
                    Ok(r) => r,
                    Err(err @ (LossError::NonFinite { .. } | LossError::Diff(_))) => return Err(fail(err.to_string())),
                    Err(err) => return Err(err.into()),
                };
                let mut cross = None;
                if let Some(i) = interface.as_ref() {
                    let (ipts, _) = i.set.batch(b);
                    let (v, g) = loss::interface_cross_entropy(model, &ipts, i.t).map_err(|err| fail(err.to_string()))?;
                    value += i.weight * v;
                    for (a, gi) in grad.iter_mut().zip(&g) {
                        *a += i.weight * gi;
                    }
                    cross = Some(v);
                }
                if !value.is_finite() {
                    return Err(fail(format!("loss = {value}")));
                }
                let lr = schedule.lr(step);
                opt.step(&mut model.params_mut().values, &grad, lr);
                step += 1;
                let record = StepRecord {
                    interval,
                    iteration: k,
                    epoch: e,
                    batch: b + 1,
                    loss: value,
                    interface: cross,
                    lr,
                };
                observer.on_step(&record);
                log.push(record);
            }
        }
        observer.on_iteration(interval, k, model)?;
        if k < cfg.adaptive_iters {
            let mut rng = rng_for(cfg.seed, Stream::Resample, stream);
            set = resample_collocation(model, times.clone(), cfg.batches, k, &mut rng)?;
        }
    }
    Ok(log)
}

/// Trains one tKRnet on `(0, T]` with the initial density as prior.
pub fn train_adaptive<O: Observer<TkrNet> + ?Sized>(
    system: &SystemSpec,
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<Trained<TkrNet>, TrainError> {
    cfg.validate()?;
    let dim = system.dim();
    let flow = cfg
        .arch
        .flow_config(dim, 0.0, cfg.t_final, rng_seed(cfg.seed, Stream::Init, 0));
    let mut model = TkrNet::new(flow, system.initial.clone())?;
    let times = make_time_grid(cfg.t_final, cfg.time_steps, cfg.points_per_step);
    let set = init_collocation(
        &system.init_box,
        times,
        cfg.batches,
        &mut rng_for(cfg.seed, Stream::Collocation, 0),
    )?;
    let steps = adaptive_loop(&mut model, system, set, None, cfg, cfg.loss, 0, observer)?;
    Ok(Trained { model, steps })
}

pub(crate) fn rng_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    use rand::RngCore;
    rng_for(seed, stream, index).next_u64()
}
