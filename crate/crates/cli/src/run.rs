use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tkrnet::eval::{self, BoundRow, ErrorRow, MomentRow};
use tkrnet::flow::{save_checkpoint, AnyModel, DensityModel, StackedModel, TkrNet};
use tkrnet::odeint::CharacteristicEnsemble;
use tkrnet::systems::{SystemSpec, VectorField};
use tkrnet::train::{
    rng_for, train_adaptive, train_temporal_choice1, train_temporal_choice2, Observer, StepRecord, Stream, TrainError,
};

use crate::config::{DecompositionMode, ExperimentConfig, Resolved};

pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const BOUND_FILE: &str = "bound.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Per adaptivity iteration, the time-averaged metrics over the evaluation times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub adapt_iter: usize,
    pub mean_rel_err: f64,
    pub mean_kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub system: String,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub iterations: Vec<IterationSummary>,
    pub bound_flags: usize,
    pub max_mean_error: f64,
    pub max_var_error: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

pub fn reference(resolved: &Resolved, seed: u64, n: usize) -> Result<CharacteristicEnsemble> {
    let mut rng = rng_for(seed, Stream::Evaluation, 0);
    Ok(eval::reference_ensemble(
        &resolved.system,
        n,
        &resolved.metric_times,
        &resolved.integrator,
        &mut rng,
    )?)
}

/// Evaluates each model handed over after an adaptivity iteration on the
/// metric times inside the interval it was trained on, and checkpoints it.
struct RunObserver<'a> {
    system: &'a SystemSpec,
    ensemble: &'a CharacteristicEnsemble,
    breaks: &'a [f64],
    checkpoints: PathBuf,
    steps: Vec<StepRecord>,
    errors: Vec<(usize, ErrorRow)>,
}

impl RunObserver<'_> {
    fn window(&self, interval: usize) -> Vec<f64> {
        let (lo, hi) = (self.breaks[interval], self.breaks[interval + 1]);
        self.ensemble
            .times
            .iter()
            .copied()
            .filter(|&t| (interval == 0 && t == 0.0) || (t > lo && t <= hi))
            .collect()
    }

    fn record<M: DensityModel>(
        &mut self,
        interval: usize,
        iteration: usize,
        model: &M,
        checkpoint: AnyModel,
    ) -> Result<(), TrainError> {
        let path = self.checkpoints.join(format!("interval{interval}_iter{iteration}.json"));
        save_checkpoint(&path, &checkpoint)?;
        let times = self.window(interval);
        let rows = eval::error_rows(model, self.system, self.ensemble, &times)
            .map_err(|e| TrainError::Observer(format!("evaluation after iteration {iteration}: {e}")))?;
        self.errors.extend(rows.into_iter().map(|r| (iteration, r)));
        Ok(())
    }
}

impl Observer<TkrNet> for RunObserver<'_> {
    fn on_step(&mut self, record: &StepRecord) {
        self.steps.push(record.clone());
    }

    fn on_iteration(&mut self, interval: usize, iteration: usize, model: &TkrNet) -> Result<(), TrainError> {
        self.record(interval, iteration, model, AnyModel::Single(model.clone()))
    }
}

impl Observer<StackedModel> for RunObserver<'_> {
    fn on_step(&mut self, record: &StepRecord) {
        self.steps.push(record.clone());
    }

    fn on_iteration(&mut self, interval: usize, iteration: usize, model: &StackedModel) -> Result<(), TrainError> {
        self.record(interval, iteration, model, AnyModel::Stacked(model.clone()))
    }
}

/// Trains the configured experiment and writes every artifact into `out`.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let resolved = cfg.resolve()?;
    let checkpoints = out.join("checkpoints");
    fs::create_dir_all(&checkpoints).with_context(|| format!("cannot create {}", checkpoints.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;

    let seed = cfg.training.seed;
    let ensemble = reference(&resolved, seed, cfg.evaluation.n_reference)?;
    let mut obs = RunObserver {
        system: &resolved.system,
        ensemble: &ensemble,
        breaks: &resolved.breaks,
        checkpoints,
        steps: Vec::new(),
        errors: Vec::new(),
    };
    let (sys, tc, breaks) = (&resolved.system, &resolved.train, &resolved.breaks);
    let model = match cfg.decomposition.mode {
        DecompositionMode::None => train_adaptive(sys, tc, &mut obs).map(|t| AnyModel::Single(t.model)),
        DecompositionMode::Choice1 => train_temporal_choice1(sys, breaks, tc, &mut obs).map(|t| AnyModel::Piecewise(t.model)),
        DecompositionMode::Choice2 => train_temporal_choice2(sys, breaks, tc, &mut obs).map(|t| AnyModel::Stacked(t.model)),
    }
    .context("training failed")?;
    save_checkpoint(&out.join(MODEL_FILE), &model)?;
    eval::write_metrics_csv(create(&out.join(METRICS_FILE))?, &obs.steps)?;
    eval::write_errors_csv(create(&out.join(ERRORS_FILE))?, &obs.errors)?;

    let finals = final_evaluation(&model, &resolved, cfg, &ensemble, out)?;
    let summary = RunSummary {
        system: resolved.system.name.clone(),
        seed,
        steps: obs.steps.len(),
        final_loss: obs.steps.last().map_or(f64::NAN, |s| s.loss),
        iterations: summarise(&obs.errors),
        bound_flags: finals.bound.iter().filter(|b| b.flagged).count(),
        max_mean_error: finals.moments.iter().map(MomentRow::mean_error).fold(0.0, f64::max),
        max_var_error: finals.moments.iter().map(MomentRow::var_error).fold(0.0, f64::max),
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn summarise(errors: &[(usize, ErrorRow)]) -> Vec<IterationSummary> {
    let mut iters: Vec<usize> = errors.iter().map(|(k, _)| *k).collect();
    iters.sort_unstable();
    iters.dedup();
    iters
        .into_iter()
        .map(|k| {
            let rows: Vec<&ErrorRow> = errors.iter().filter(|(i, _)| *i == k).map(|(_, r)| r).collect();
            let n = rows.len() as f64;
            IterationSummary {
                adapt_iter: k,
                mean_rel_err: rows.iter().map(|r| r.rel_err).sum::<f64>() / n,
                mean_kl: rows.iter().map(|r| r.kl).sum::<f64>() / n,
            }
        })
        .collect()
}

pub struct FinalMetrics {
    pub errors: Vec<ErrorRow>,
    pub moments: Vec<MomentRow>,
    pub bound: Vec<BoundRow>,
}

/// Moments, the KL bound check and density grids for a finished model.
pub fn final_evaluation(
    model: &AnyModel,
    resolved: &Resolved,
    cfg: &ExperimentConfig,
    ensemble: &CharacteristicEnsemble,
    out: &Path,
) -> Result<FinalMetrics> {
    let e = &cfg.evaluation;
    let seed = cfg.training.seed;
    let errors = eval::error_rows(model, &resolved.system, ensemble, &resolved.metric_times)?;
    let n_model = if e.moment_samples == 0 { e.n_reference } else { e.moment_samples };
    let mut moments = Vec::new();
    for (k, &t) in resolved.metric_times.iter().enumerate() {
        let mut rng = rng_for(seed, Stream::Evaluation, 1 + k as u64);
        moments.extend(eval::moment_errors(model, ensemble, t, n_model, &mut rng)?);
    }
    eval::write_moments_csv(create(&out.join(MOMENTS_FILE))?, &moments)?;
    let bound = if resolved.metric_times.len() > 2 * e.bound_stride {
        eval::kl_bound_diagnostic(model, &resolved.system, ensemble, e.bound_stride)?
    } else {
        Vec::new()
    };
    write_bound_csv(create(&out.join(BOUND_FILE))?, &bound)?;
    write_grids(model, resolved, cfg, out)?;
    Ok(FinalMetrics { errors, moments, bound })
}

pub fn grid_file_name(t: f64) -> String {
    format!("density_t{t}.csv")
}

fn write_grids(model: &AnyModel, resolved: &Resolved, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let e = &cfg.evaluation;
    for &t in &e.grid_times {
        let grid = eval::density_grid_export(
            model,
            t,
            resolved.grid_box,
            e.grid_resolution,
            e.grid_axes,
            &resolved.system.initial.mean,
        )?;
        eval::write_grid_csv(create(&out.join(grid_file_name(t)))?, &grid)?;
    }
    Ok(())
}

fn write_bound_csv<W: Write>(mut w: W, rows: &[BoundRow]) -> std::io::Result<()> {
    writeln!(w, "t,dkl_dt,dkl_se,bound,bound_se,flagged")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.t, r.dkl_dt, r.dkl_se, r.bound, r.bound_se, r.flagged)?;
    }
    Ok(())
}

/// Recomputes errors, moments, the bound check and grids for a checkpoint.
pub fn evaluate(model: &AnyModel, cfg: &ExperimentConfig, out: &Path) -> Result<FinalMetrics> {
    let resolved = cfg.resolve()?;
    if model.dim() != resolved.system.dim() {
        anyhow::bail!(
            "checkpoint has dimension {} but the system has {}",
            model.dim(),
            resolved.system.dim()
        );
    }
    fs::create_dir_all(out)?;
    let ensemble = reference(&resolved, cfg.training.seed, cfg.evaluation.n_reference)?;
    let metrics = final_evaluation(model, &resolved, cfg, &ensemble, out)?;
    let tagged: Vec<(usize, ErrorRow)> = metrics.errors.iter().map(|r| (0, r.clone())).collect();
    eval::write_errors_csv(create(&out.join(ERRORS_FILE))?, &tagged)?;
    Ok(metrics)
}

pub fn sample(model: &AnyModel, t: f64, n: usize, seed: u64, out: &Path) -> Result<()> {
    let mut rng = rng_for(seed, Stream::Evaluation, u64::from(u32::MAX));
    let draws = model.sample(t, n, &mut rng)?;
    eval::write_samples_csv(create(out)?, model.dim(), &draws)?;
    Ok(())
}

/// Writes the characteristics ensemble: one row per trajectory and time.
pub fn write_reference(ens: &CharacteristicEnsemble, out: &Path) -> Result<()> {
    let mut w = create(out)?;
    let d = ens.states.first().and_then(|s| s.first()).map_or(0, Vec::len);
    let cols: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    writeln!(w, "traj,t,{},log_p", cols.join(","))?;
    for (i, (states, logs)) in ens.states.iter().zip(&ens.log_density).enumerate() {
        for ((t, x), lp) in ens.times.iter().zip(states).zip(logs) {
            let xs: Vec<String> = x.iter().map(f64::to_string).collect();
            writeln!(w, "{i},{t},{},{lp}", xs.join(","))?;
        }
    }
    Ok(())
}
