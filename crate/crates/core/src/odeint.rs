//! Dormand–Prince 5(4) integration of benchmark systems and of the
//! log-density along characteristics, `dℓ/dt = -∇·f`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::systems::{SystemSpec, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("trajectory {traj}: step size underflow at t = {t}")]
    StepUnderflow { traj: usize, t: f64 },
    #[error("trajectory {traj}: exceeded {max_steps} steps at t = {t}")]
    MaxSteps { traj: usize, t: f64, max_steps: usize },
    #[error("trajectory {traj}: non-finite state at t = {t}")]
    NonFinite { traj: usize, t: f64 },
    #[error("output times must be non-negative and strictly increasing")]
    Times,
    #[error("invalid integrator config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Disables error control and takes steps of this size instead.
    #[serde(default)]
    pub fixed_step: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 1_000_000,
            fixed_step: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(OdeError::Config("rtol and atol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(OdeError::Config("max_steps must be positive".into()));
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0) {
                return Err(OdeError::Config("fixed_step must be positive".into()));
            }
        }
        Ok(())
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

/// One Dormand–Prince step from `(t, y)` with `k[0] = f(t, y)` already set.
/// Leaves the 5th order solution in `y_new`, `f(t+h, y_new)` in `k[6]`, and
/// returns the scaled RMS error norm.
fn dopri_step<F>(f: &F, t: f64, y: &[f64], h: f64, s: &mut Stages, cfg: &IntegratorConfig) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Stages { k, tmp, y_new } = s;
    let combo = |tmp: &mut Vec<f64>, k: &[Vec<f64>; 7], coeffs: &[(usize, f64)]| {
        for i in 0..n {
            tmp[i] = y[i] + h * coeffs.iter().map(|&(j, a)| a * k[j][i]).sum::<f64>();
        }
    };
    combo(tmp, k, &[(0, A21)]);
    f(t + C2 * h, tmp, &mut k[1]);
    combo(tmp, k, &[(0, A31), (1, A32)]);
    f(t + C3 * h, tmp, &mut k[2]);
    combo(tmp, k, &[(0, A41), (1, A42), (2, A43)]);
    f(t + C4 * h, tmp, &mut k[3]);
    combo(tmp, k, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
    f(t + C5 * h, tmp, &mut k[4]);
    combo(tmp, k, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
    f(t + h, tmp, &mut k[5]);
    combo(y_new, k, &[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)]);
    f(t + h, y_new, &mut k[6]);

    let mut err = 0.0;
    for i in 0..n {
        let e = h
            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        let sc = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
        err += (e / sc).powi(2);
    }
    (err / n.max(1) as f64).sqrt()
}

/// Starting step from the two-evaluation heuristic of Hairer, Nørsett & Wanner.
fn initial_step<F>(f: &F, t: f64, y: &[f64], f0: &[f64], cfg: &IntegratorConfig, span: f64) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| cfg.atol + cfg.rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    f(t + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

fn check_times(times: &[f64]) -> Result<(), OdeError> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OdeError::Times);
    }
    Ok(())
}

/// Integrates `y' = f(t, y)` from `y(0) = y0` and reports the state at each
/// of `times`. `traj` only labels errors.
pub fn integrate_rhs<F>(
    f: F,
    y0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
    traj: usize,
) -> Result<Vec<Vec<f64>>, OdeError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    check_times(times)?;
    let n = y0.len();
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut y = y0.to_vec();
    let mut s = Stages::new(n);
    f(t, &y, &mut s.k[0]);
    let t_end = times.last().copied().unwrap_or(0.0);
    let mut h = match cfg.fixed_step {
        Some(h) => h,
        None if t_end > 0.0 => initial_step(&f, t, &y, &s.k[0].clone(), cfg, t_end),
        None => 0.0,
    };
    let mut err_prev: f64 = 1e-4;
    let mut steps = 0usize;
    for &target in times {
        while t < target {
            if steps >= cfg.max_steps {
                return Err(OdeError::MaxSteps {
                    traj,
                    t,
                    max_steps: cfg.max_steps,
                });
            }
            steps += 1;
            let remaining = target - t;
            let last = h >= remaining * (1.0 - 1e-12);
            let h_try = if last { remaining } else { h };
            if h_try <= t.abs().max(1.0) * f64::EPSILON * 4.0 {
                return Err(OdeError::StepUnderflow { traj, t });
            }
            let err = dopri_step(&f, t, &y, h_try, &mut s, cfg);
            if !err.is_finite() && cfg.fixed_step.is_none() {
                h = h_try * FAC_MIN;
                continue;
            }
            if cfg.fixed_step.is_some() || err <= 1.0 {
                t = if last { target } else { t + h_try };
                std::mem::swap(&mut y, &mut s.y_new);
                s.k.swap(0, 6);
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(OdeError::NonFinite { traj, t });
                }
                if cfg.fixed_step.is_none() {
                    let fac = if err == 0.0 {
                        FAC_MAX
                    } else {
                        (SAFETY * err.powf(-EXPO) * err_prev.powf(BETA)).clamp(FAC_MIN, FAC_MAX)
                    };
                    err_prev = err.max(1e-4);
                    // a step clipped to an output time does not inform the next one
                    h = if last { h.max(h_try * fac) } else { h_try * fac };
                }
            } else {
                h = h_try * (SAFETY * err.powf(-EXPO)).clamp(FAC_MIN, 1.0);
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// States of `x' = field(x, t)` at `times`.
pub fn integrate<F: VectorField>(
    field: &F,
    x0: &[f64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>, OdeError> {
    integrate_rhs(|t, x, dx| field.eval(x, t, dx), x0, times, cfg, 0)
}

/// States and log-density along the characteristic from `x0`.
pub fn integrate_with_logdensity<F: VectorField>(
    field: &F,
    x0: &[f64],
    log_p0: f64,
    times: &[f64],
    cfg: &IntegratorConfig,
    traj: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), OdeError> {
    let d = field.dim();
    let mut y0 = x0.to_vec();
    y0.push(log_p0);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let x = &y[..d];
        field.eval(x, t, &mut dy[..d]);
        dy[d] = -field.divergence(x, t);
    };
    let ys = integrate_rhs(rhs, &y0, times, cfg, traj)?;
    let logp = ys.iter().map(|y| y[d]).collect();
    let states = ys.into_iter().map(|mut y| {
        y.truncate(d);
        y
    });
    Ok((states.collect(), logp))
}

/// Reference solution by the method of characteristics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicEnsemble {
    pub times: Vec<f64>,
    /// `states[traj][time]` is a point in `R^d`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// `log_density[traj][time]`.
    pub log_density: Vec<Vec<f64>>,
}

impl CharacteristicEnsemble {
    /// Integrates every initial state; results keep the input order.
    pub fn compute(
        system: &SystemSpec,
        initial_states: &[Vec<f64>],
        times: &[f64],
        cfg: &IntegratorConfig,
    ) -> Result<Self, OdeError> {
        let runs: Vec<_> = initial_states
            .par_iter()
            .enumerate()
            .map(|(i, x0)| integrate_with_logdensity(system, x0, system.log_p0(x0), times, cfg, i))
            .collect::<Result<_, _>>()?;
        let (states, log_density) = runs.into_iter().unzip();
        Ok(Self {
            times: times.to_vec(),
            states,
            log_density,
        })
    }

    pub fn n_traj(&self) -> usize {
        self.states.len()
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Points and log-densities at time index `k`.
    pub fn slice(&self, k: usize) -> (Vec<&[f64]>, Vec<f64>) {
        let pts = self.states.iter().map(|s| s[k].as_slice()).collect();
        let lp = self.log_density.iter().map(|l| l[k]).collect();
        (pts, lp)
    }
}
