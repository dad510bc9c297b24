//! Reference solutions by characteristics and the error metrics reported
//! against them.

mod csv;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{DensityModel, FlowError};
use crate::loss::{self, LossError};
use crate::odeint::{CharacteristicEnsemble, IntegratorConfig, OdeError};
use crate::systems::{SystemSpec, VectorField};

pub use csv::{write_errors_csv, write_grid_csv, write_metrics_csv, write_moments_csv, write_samples_csv};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("time {0} is not on the reference grid")]
    MissingTime(f64),
    #[error("non-finite {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

/// Samples `n_v` initial states from `p_0` and follows them to every time in `times`.
pub fn reference_ensemble<R: Rng + ?Sized>(
    system: &SystemSpec,
    n_v: usize,
    times: &[f64],
    cfg: &IntegratorConfig,
    rng: &mut R,
) -> Result<CharacteristicEnsemble, EvalError> {
    let initial = system.sample_p0(rng, n_v);
    Ok(CharacteristicEnsemble::compute(system, &initial, times, cfg)?)
}

fn index_of(ens: &CharacteristicEnsemble, t: f64) -> Result<usize, EvalError> {
    ens.time_index(t).ok_or(EvalError::MissingTime(t))
}

/// Model log-density at the ensemble states for time index `k`.
pub fn model_log_density<M: DensityModel>(model: &M, ens: &CharacteristicEnsemble, k: usize) -> Result<Vec<f64>, EvalError> {
    let t = ens.times[k];
    let (pts, _) = ens.slice(k);
    Ok(pts
        .par_iter()
        .map(|x| model.log_density(x, t))
        .collect::<Result<_, _>>()?)
}

/// `(1/N) Σ |p - p_Θ| / |p|` from paired log-densities.
pub fn relative_error_values(log_ref: &[f64], log_model: &[f64]) -> f64 {
    let n = log_ref.len() as f64;
    log_ref
        .iter()
        .zip(log_model)
        .map(|(r, m)| (1.0 - (m - r).exp()).abs())
        .sum::<f64>()
        / n
}

/// Terms `log(p / p_Θ)` of the KL estimate.
pub fn kl_terms(log_ref: &[f64], log_model: &[f64]) -> Vec<f64> {
    log_ref.iter().zip(log_model).map(|(r, m)| r - m).collect()
}

pub fn relative_error<M: DensityModel>(model: &M, ens: &CharacteristicEnsemble, t: f64) -> Result<f64, EvalError> {
    let k = index_of(ens, t)?;
    let lm = model_log_density(model, ens, k)?;
    let (_, lr) = ens.slice(k);
    finite(relative_error_values(&lr, &lm), "relative error", t)
}

/// Plain Monte Carlo estimate of `KL(p ‖ p_Θ)` over the reference states.
pub fn kl_estimate<M: DensityModel>(model: &M, ens: &CharacteristicEnsemble, t: f64) -> Result<Estimate, EvalError> {
    let k = index_of(ens, t)?;
    let lm = model_log_density(model, ens, k)?;
    let (_, lr) = ens.slice(k);
    let e = Estimate::of(&kl_terms(&lr, &lm));
    finite(e.mean, "KL estimate", t)?;
    Ok(e)
}

/// `E_p |r_log|` over the reference states at `t`.
pub fn mean_abs_residual<M: DensityModel, F: VectorField>(
    model: &M,
    field: &F,
    ens: &CharacteristicEnsemble,
    t: f64,
) -> Result<Estimate, EvalError> {
    let k = index_of(ens, t)?;
    let (pts, _) = ens.slice(k);
    let r: Vec<f64> = pts
        .par_iter()
        .map(|x| loss::residual_log(model, field, x, t).map(f64::abs))
        .collect::<Result<_, _>>()?;
    let e = Estimate::of(&r);
    finite(e.mean, "mean |r_log|", t)?;
    Ok(e)
}

fn finite(v: f64, what: &'static str, t: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { what, t })
    }
}

/// One row of `errors.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub t: f64,
    pub rel_err: f64,
    pub kl: f64,
    pub mean_abs_rlog: f64,
}

/// Error metrics at every time of the ensemble, in ascending time order.
pub fn error_table<M: DensityModel, F: VectorField>(
    model: &M,
    field: &F,
    ens: &CharacteristicEnsemble,
) -> Result<Vec<ErrorRow>, EvalError> {
    let mut times = ens.times.clone();
    times.sort_by(f64::total_cmp);
    error_rows(model, field, ens, &times)
}

/// Error metrics at the given ensemble times.
pub fn error_rows<M: DensityModel, F: VectorField>(
    model: &M,
    field: &F,
    ens: &CharacteristicEnsemble,
    times: &[f64],
) -> Result<Vec<ErrorRow>, EvalError> {
    times
        .iter()
        .map(|&t| {
            Ok(ErrorRow {
                t,
                rel_err: relative_error(model, ens, t)?,
                kl: kl_estimate(model, ens, t)?.mean,
                mean_abs_rlog: mean_abs_residual(model, field, ens, t)?.mean,
            })
        })
        .collect()
}

/// One row of `moments.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub dim: usize,
    pub mean_ref: f64,
    pub mean_model: f64,
    pub var_ref: f64,
    pub var_model: f64,
}

impl MomentRow {
    pub fn mean_error(&self) -> f64 {
        (self.mean_ref - self.mean_model).abs()
    }

    pub fn var_error(&self) -> f64 {
        (self.var_ref - self.var_model).abs()
    }
}

/// Per-coordinate sample mean and variance with the `N/(N-1)` correction.
pub fn sample_moments(points: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() as f64;
    let d = points.first().map_or(0, |p| p.len());
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for p in points {
        for j in 0..d {
            mean[j] += p[j];
            sq[j] += p[j] * p[j];
        }
    }
    let var = (0..d)
        .map(|j| {
            let m = mean[j] / n;
            n / (n - 1.0) * (sq[j] / n - m * m)
        })
        .collect();
    (mean.iter().map(|m| m / n).collect(), var)
}

pub fn moment_errors<M: DensityModel, R: Rng + ?Sized>(
    model: &M,
    ens: &CharacteristicEnsemble,
    t: f64,
    n_model_samples: usize,
    rng: &mut R,
) -> Result<Vec<MomentRow>, EvalError> {
    if n_model_samples < 2 || ens.n_traj() < 2 {
        return Err(EvalError::Invalid("moments need at least two samples".into()));
    }
    let k = index_of(ens, t)?;
    let (pts, _) = ens.slice(k);
    let (mean_ref, var_ref) = sample_moments(&pts);
    let draws = model.sample(t, n_model_samples, rng)?;
    let refs: Vec<&[f64]> = draws.iter().map(|p| p.as_slice()).collect();
    let (mean_model, var_model) = sample_moments(&refs);
    let rows: Vec<MomentRow> = (0..mean_ref.len())
        .map(|j| MomentRow {
            t,
            dim: j + 1,
            mean_ref: mean_ref[j],
            mean_model: mean_model[j],
            var_ref: var_ref[j],
            var_model: var_model[j],
        })
        .collect();
    if rows.iter().any(|r| !(r.mean_model.is_finite() && r.var_model.is_finite())) {
        return Err(EvalError::NonFinite { what: "model moments", t });
    }
    Ok(rows)
}

/// Finite-difference `dKL/dt` against the bound `E_p|r_log|` at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: f64,
    pub dkl_dt: f64,
    pub dkl_se: f64,
    pub bound: f64,
    pub bound_se: f64,
    /// `dkl_dt` exceeds `bound` by more than three combined standard errors.
    pub flagged: bool,
}

/// Checks `d/dt KL(p ‖ p_Θ) ≤ E_p|r_log|` at each interior time of the
/// ensemble grid. The derivative is a central difference `stride` grid
/// points either side, computed per trajectory so its standard error
/// accounts for the shared samples.
pub fn kl_bound_diagnostic<M: DensityModel, F: VectorField>(
    model: &M,
    field: &F,
    ens: &CharacteristicEnsemble,
    stride: usize,
) -> Result<Vec<BoundRow>, EvalError> {
    let nt = ens.times.len();
    if stride == 0 || nt < 2 * stride + 1 {
        return Err(EvalError::Invalid(format!("{nt} times cannot support stride {stride}")));
    }
    if ens.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EvalError::Invalid("ensemble times must increase".into()));
    }
    let terms: Vec<Vec<f64>> = (0..nt)
        .map(|k| {
            let lm = model_log_density(model, ens, k)?;
            Ok(kl_terms(&ens.slice(k).1, &lm))
        })
        .collect::<Result<_, EvalError>>()?;
    (stride..nt - stride)
        .map(|k| {
            let t = ens.times[k];
            let h = ens.times[k + stride] - ens.times[k - stride];
            let diffs: Vec<f64> = terms[k + stride]
                .iter()
                .zip(&terms[k - stride])
                .map(|(a, b)| (a - b) / h)
                .collect();
            let d = Estimate::of(&diffs);
            let b = mean_abs_residual(model, field, ens, t)?;
            finite(d.mean, "dKL/dt", t)?;
            let flagged = d.mean > b.mean + 3.0 * (d.se * d.se + b.se * b.se).sqrt();
            Ok(BoundRow {
                t,
                dkl_dt: d.mean,
                dkl_se: d.se,
                bound: b.mean,
                bound_se: b.se,
                flagged,
            })
        })
        .collect()
}

/// Density on a `resolution × resolution` grid over a 2D box in coordinates
/// `axes`, other coordinates held at `anchor`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub t: f64,
    pub axes: [usize; 2],
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `p[i][j]` at `(x1[i], x2[j])`.
    pub p: Vec<Vec<f64>>,
}

impl DensityGrid {
    /// Tensor trapezoid rule over the box.
    pub fn trapezoid(&self) -> f64 {
        let w = |xs: &[f64], i: usize| {
            let n = xs.len();
            let left = if i > 0 { xs[i] - xs[i - 1] } else { 0.0 };
            let right = if i + 1 < n { xs[i + 1] - xs[i] } else { 0.0 };
            0.5 * (left + right)
        };
        let mut total = 0.0;
        for (i, row) in self.p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                total += w(&self.x1, i) * w(&self.x2, j) * v;
            }
        }
        total
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

pub fn density_grid_export<M: DensityModel>(
    model: &M,
    t: f64,
    bbox: [[f64; 2]; 2],
    resolution: usize,
    axes: [usize; 2],
    anchor: &[f64],
) -> Result<DensityGrid, EvalError> {
    let d = model.dim();
    if resolution < 2 || axes[0] == axes[1] || axes.iter().any(|&a| a >= d) || anchor.len() != d {
        return Err(EvalError::Invalid(format!(
            "grid needs resolution >= 2, two distinct axes below {d} and a {d}-dimensional anchor"
        )));
    }
    let x1 = linspace(bbox[0][0], bbox[0][1], resolution);
    let x2 = linspace(bbox[1][0], bbox[1][1], resolution);
    let p = x1
        .par_iter()
        .map(|&a| {
            x2.iter()
                .map(|&b| {
                    let mut x = anchor.to_vec();
                    x[axes[0]] = a;
                    x[axes[1]] = b;
                    model.log_density(&x, t).map(f64::exp)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DensityGrid { t, axes, x1, x2, p })
}
