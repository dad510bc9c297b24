use rand::Rng;

use crate::flow::{DensityModel, FlowError, PiecewiseModel, StackedModel, TkrNet};
use crate::loss::LossVariant;
use crate::systems::{SystemSpec, VectorField};

use super::{
    adaptive_loop, init_collocation, interval_time_grid, make_time_grid, rng_for, rng_seed, CollocationSet, Interface,
    Observer, Stream, TrainConfig, TrainError, Trained,
};

/// `0 = T_0 < T_1 < … < T_n = t_final` in equal steps.
pub fn equal_breaks(t_final: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| if i == n { t_final } else { t_final * i as f64 / n as f64 })
        .collect()
}

fn check_breaks(breaks: &[f64], cfg: &TrainConfig) -> Result<(), TrainError> {
    if breaks.len() < 2 || breaks[0] != 0.0 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TrainError::Config("interval breaks must start at 0 and increase".into()));
    }
    let end = *breaks.last().unwrap();
    if (end - cfg.t_final).abs() > 1e-12 * cfg.t_final.max(1.0) {
        return Err(TrainError::Config(format!(
            "last break {end} differs from t_final {}",
            cfg.t_final
        )));
    }
    Ok(())
}

/// Single intervals use the same grid as undecomposed training; otherwise every
/// interval carries `J + 1` levels including its left end.
fn interval_grid(breaks: &[f64], i: usize, cfg: &TrainConfig) -> Vec<f64> {
    if breaks.len() == 2 {
        make_time_grid(breaks[1], cfg.time_steps, cfg.points_per_step)
    } else {
        interval_time_grid(breaks[i], breaks[i + 1], cfg.time_steps, cfg.points_per_step)
    }
}

fn initial_set(system: &SystemSpec, times: Vec<f64>, cfg: &TrainConfig, i: usize) -> Result<CollocationSet, TrainError> {
    let mut rng = rng_for(cfg.seed, Stream::Collocation, i as u64);
    init_collocation(&system.init_box, times, cfg.batches, &mut rng)
}

/// Independent models on `(0, T_i]` sharing the initial density as prior. After
/// the first interval, each loss adds the cross-entropy against samples of the
/// previous model at `T_{i-1}`, and the first collocation draw also comes from
/// that model instead of the box.
pub fn train_temporal_choice1<O: Observer<TkrNet> + ?Sized>(
    system: &SystemSpec,
    breaks: &[f64],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<Trained<PiecewiseModel>, TrainError> {
    cfg.validate()?;
    check_breaks(breaks, cfg)?;
    let mut models: Vec<TkrNet> = Vec::new();
    let mut steps = Vec::new();
    for i in 0..breaks.len() - 1 {
        let flow = cfg
            .arch
            .flow_config(system.dim(), 0.0, breaks[i + 1], rng_seed(cfg.seed, Stream::Init, i as u64));
        let mut net = TkrNet::new(flow, system.initial.clone())?;
        let times = interval_grid(breaks, i, cfg);
        let interface = match models.last() {
            None => None,
            Some(prev) => {
                let t = breaks[i];
                let mut rng = rng_for(cfg.seed, Stream::Interface, i as u64);
                let samples = prev.sample(t, times.len(), &mut rng)?;
                let set = CollocationSet::new(samples, vec![t; times.len()], cfg.batches, 0, &mut rng)?;
                Some(Interface {
                    set,
                    t,
                    weight: cfg.interface_weight,
                })
            }
        };
        let set = match models.last() {
            None => initial_set(system, times, cfg, i)?,
            Some(prev) => {
                let mut rng = rng_for(cfg.seed, Stream::Collocation, i as u64);
                let points = prev.sample(breaks[i], times.len(), &mut rng)?;
                CollocationSet::new(points, times, cfg.batches, 0, &mut rng)?
            }
        };
        steps.extend(adaptive_loop(&mut net, system, set, interface, cfg, cfg.loss, i, observer)?);
        models.push(net);
    }
    Ok(Trained {
        model: PiecewiseModel::new(breaks.to_vec(), models)?,
        steps,
    })
}

/// Local models stacked on the density reached at the end of the previous
/// interval. Each local model sees `t - T_{i-1}` and `T_{i-1}` as time
/// inputs, has no nonlinear layer and is trained on the plain residual.
pub fn train_temporal_choice2<O: Observer<StackedModel> + ?Sized>(
    system: &SystemSpec,
    breaks: &[f64],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<Trained<StackedModel>, TrainError> {
    cfg.validate()?;
    check_breaks(breaks, cfg)?;
    let mut stack = StackedModel::new(system.initial.clone(), breaks.to_vec())?;
    let mut steps = Vec::new();
    for i in 0..breaks.len() - 1 {
        let mut flow = cfg.arch.flow_config(
            system.dim(),
            breaks[i],
            breaks[i + 1] - breaks[i],
            rng_seed(cfg.seed, Stream::Init, i as u64),
        );
        flow.nonlinear = None;
        flow.origin_input = true;
        stack.push(TkrNet::new(flow, system.initial.clone())?)?;
        let set = initial_set(system, interval_grid(breaks, i, cfg), cfg, i)?;
        steps.extend(adaptive_loop(&mut stack, system, set, None, cfg, LossVariant::Plain, i, observer)?);
    }
    Ok(Trained { model: stack, steps })
}

/// Draws `n` points from the stacked density at `t`.
pub fn stacked_sample<R: Rng + ?Sized>(
    stack: &StackedModel,
    t: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, FlowError> {
    stack.sample(t, n, rng)
}
