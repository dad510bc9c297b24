//! Liouville residuals and the losses built from them.
//!
//! For a model density `p` and dynamics `f`,
//! `r_log = ∂_t log p + ∇_x log p · f + ∇·f`, which is the derivative of
//! `log p` along the space-time direction `(f(x, t), 1)` plus the
//! divergence. One tangent direction therefore suffices, and evaluating it
//! on tape variables gives the exact parameter gradient of `r_log²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{self, DiffError, ParameterStore, Real, ScalarField, Tangent, Tape, Var};
use crate::flow::{DensityModel, FlowError, TkrNet, Trainable};
use crate::systems::VectorField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("points and times differ in length ({points} vs {times})")]
    Mismatch { points: usize, times: usize },
    #[error("non-finite loss term at batch item {item}")]
    NonFinite { item: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Which residual is squared in the collocation loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `r_log²`.
    #[default]
    Log,
    /// `(p · r_log)²`.
    Plain,
}

/// Points per tape. Gradients are summed chunk by chunk in index order, so
/// results do not depend on the thread count.
const CHUNK: usize = 32;

struct LogDensity<'a, M>(&'a M);

impl<M: DensityModel> ScalarField for LogDensity<'_, M> {
    fn eval<S: Real>(&self, x: &[S], t: S) -> S {
        self.0.log_density_at(x, t).unwrap_or_else(|_| S::cst(f64::NAN))
    }
}

/// Log-density of a model together with its input-derivative channels.
pub struct DensityView<'a, M> {
    pub model: &'a M,
}

impl<'a, M: DensityModel> DensityView<'a, M> {
    pub fn new(model: &'a M) -> Self {
        Self { model }
    }

    pub fn log_density(&self, x: &[f64], t: f64) -> Result<f64, LossError> {
        Ok(self.model.log_density(x, t)?)
    }

    pub fn density(&self, x: &[f64], t: f64) -> Result<f64, LossError> {
        Ok(self.log_density(x, t)?.exp())
    }

    /// `(log p, ∂_t log p, ∇_x log p)`.
    pub fn channels(&self, x: &[f64], t: f64) -> Result<(f64, f64, Vec<f64>), LossError> {
        self.model.log_density(x, t)?;
        let d = x.len();
        let dirs: Vec<Vec<f64>> = (0..=d)
            .map(|k| {
                let mut e = vec![0.0; d + 1];
                e[(k + d) % (d + 1)] = 1.0;
                e
            })
            .collect();
        let (lp, mut derivs) = diffcore::directional_derivatives(&LogDensity(self.model), x, t, &dirs)?;
        let dt = derivs.remove(0);
        Ok((lp, dt, derivs))
    }

    /// `(log p, r_log)` from a single tangent direction.
    pub fn log_residual<F: VectorField>(&self, field: &F, x: &[f64], t: f64) -> Result<(f64, f64), LossError> {
        let fx = field.field(x, t);
        let xs: Vec<Tangent<f64, 1>> = x.iter().zip(&fx).map(|(&v, &f)| Tangent::new(v, [f])).collect();
        let lp = self.model.log_density_at(&xs, Tangent::seeded(t, 0))?;
        let r = lp.d[0] + field.divergence(x, t);
        if !(lp.v.is_finite() && r.is_finite()) {
            return Err(LossError::NonFinite { item: 0 });
        }
        Ok((lp.v, r))
    }
}

pub fn residual_log<M: DensityModel, F: VectorField>(model: &M, field: &F, x: &[f64], t: f64) -> Result<f64, LossError> {
    Ok(DensityView::new(model).log_residual(field, x, t)?.1)
}

/// `r = ∂_t p + ∇·(p f)`, formed as `p · r_log`.
pub fn residual<M: DensityModel, F: VectorField>(model: &M, field: &F, x: &[f64], t: f64) -> Result<f64, LossError> {
    let (lp, r) = DensityView::new(model).log_residual(field, x, t)?;
    Ok(lp.exp() * r)
}

/// A per-item loss recorded on a tape over the model parameters.
pub trait PointLoss<M>: Sync {
    fn len(&self) -> usize;
    fn eval<'t>(&self, model: &M, theta: &[Var<'t>], item: usize) -> Result<Var<'t>, LossError>;
}

/// Mean of `term` over its items and the exact gradient of that mean.
pub fn mean_with_gradient<M, L>(model: &M, store: &ParameterStore, term: &L) -> Result<(f64, Vec<f64>), LossError>
where
    M: Sync,
    L: PointLoss<M>,
{
    let n = term.len();
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    let scale = 1.0 / n as f64;
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&start| {
            let tape = Tape::new();
            let theta = tape.vars(&store.values);
            let mark = tape.len();
            let mut total = 0.0;
            let mut grad = vec![0.0; store.len()];
            for item in start..(start + CHUNK).min(n) {
                let v = term.eval(model, &theta, item)?;
                if !v.value().is_finite() {
                    return Err(LossError::NonFinite { item });
                }
                total += v.value();
                tape.accumulate(v, scale, &mut grad);
                tape.rewind(mark);
            }
            Ok((total, grad))
        })
        .collect::<Result<_, LossError>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; store.len()];
    for (v, g) in parts {
        value += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    diffcore::check_gradient(store, &grad)?;
    Ok((value * scale, grad))
}

/// Squared residual at collocation points.
pub struct ResidualTerm<'a, F> {
    pub field: &'a F,
    pub points: &'a [&'a [f64]],
    pub times: &'a [f64],
    pub variant: LossVariant,
}

impl<M: Trainable, F: VectorField> PointLoss<M> for ResidualTerm<'_, F> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn eval<'t>(&self, model: &M, theta: &[Var<'t>], item: usize) -> Result<Var<'t>, LossError> {
        let x = self.points[item];
        let t = self.times[item];
        let fx = self.field.field(x, t);
        let xs: Vec<Tangent<Var<'t>, 1>> = x
            .iter()
            .zip(&fx)
            .map(|(&v, &f)| Tangent::new(Var::constant(v), [Var::constant(f)]))
            .collect();
        let ts = Tangent::new(Var::constant(t), [Var::constant(1.0)]);
        let lp = model.log_density_with(theta, &xs, ts)?;
        let r_log = lp.d[0].offset(self.field.divergence(x, t));
        Ok(match self.variant {
            LossVariant::Log => r_log * r_log,
            LossVariant::Plain => {
                let r = lp.v.exp() * r_log;
                r * r
            }
        })
    }
}

/// Negative log-density at interface samples.
pub struct InterfaceTerm<'a> {
    pub points: &'a [&'a [f64]],
    pub t: f64,
}

impl<M: Trainable> PointLoss<M> for InterfaceTerm<'_> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn eval<'t>(&self, model: &M, theta: &[Var<'t>], item: usize) -> Result<Var<'t>, LossError> {
        let xs: Vec<Var<'t>> = self.points[item].iter().map(|&v| Var::constant(v)).collect();
        Ok(-model.log_density_with(theta, &xs, Var::constant(self.t))?)
    }
}

fn check_batch(points: &[&[f64]], times: &[f64]) -> Result<(), LossError> {
    if points.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if points.len() != times.len() {
        return Err(LossError::Mismatch {
            points: points.len(),
            times: times.len(),
        });
    }
    Ok(())
}

/// Mean squared residual over a batch and its parameter gradient.
pub fn batch_loss<M: Trainable, F: VectorField>(
    model: &M,
    field: &F,
    points: &[&[f64]],
    times: &[f64],
    variant: LossVariant,
) -> Result<(f64, Vec<f64>), LossError> {
    check_batch(points, times)?;
    let term = ResidualTerm {
        field,
        points,
        times,
        variant,
    };
    mean_with_gradient(model, model.params(), &term)
}

/// `-(1/N) Σ log p(x_k, t_prev)` over samples of the previous model.
pub fn interface_cross_entropy<M: Trainable>(
    model: &M,
    samples: &[&[f64]],
    t_prev: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    let term = InterfaceTerm { points: samples, t: t_prev };
    mean_with_gradient(model, model.params(), &term)
}

/// `‖∂_t T⁻¹(z, t) - f(T⁻¹(z, t), t)‖²` with `z = T(x, t)` held fixed in
/// the time derivative.
pub fn ode_residual<F: VectorField>(model: &TkrNet, field: &F, x: &[f64], t: f64) -> Result<f64, LossError> {
    let theta = &model.params.values;
    let (z, _) = model.transform_with(theta, x, t)?;
    let zs: Vec<Tangent<f64, 1>> = z.iter().map(|&v| Tangent::constant(v)).collect();
    let xr = model.inverse_with(theta, &zs, Tangent::seeded(t, 0))?;
    let xv: Vec<f64> = xr.iter().map(|v| v.v).collect();
    let f = field.field(&xv, t);
    Ok(xr.iter().zip(&f).map(|(v, fi)| (v.d[0] - fi).powi(2)).sum())
}

pub struct OdeTerm<'a, F> {
    pub field: &'a F,
    pub points: &'a [&'a [f64]],
    pub times: &'a [f64],
}

impl<F: VectorField> PointLoss<TkrNet> for OdeTerm<'_, F> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn eval<'t>(&self, model: &TkrNet, theta: &[Var<'t>], item: usize) -> Result<Var<'t>, LossError> {
        let x: Vec<Var<'t>> = self.points[item].iter().map(|&v| Var::constant(v)).collect();
        let t = self.times[item];
        let (z, _) = model.transform_with(theta, &x, Var::constant(t))?;
        let zs: Vec<Tangent<Var<'t>, 1>> = z.into_iter().map(Tangent::constant).collect();
        let ts = Tangent::new(Var::constant(t), [Var::constant(1.0)]);
        let xr = model.inverse_with(theta, &zs, ts)?;
        let xv: Vec<Var<'t>> = xr.iter().map(|v| v.v).collect();
        let f = self.field.field_with(&xv, Var::constant(t));
        Ok(Var::sum(xr.iter().zip(&f).map(|(v, &fi)| {
            let e = v.d[0] - fi;
            e * e
        })))
    }
}

/// Batch mean of [`ode_residual`] and its parameter gradient.
pub fn ode_loss<F: VectorField>(
    model: &TkrNet,
    field: &F,
    points: &[&[f64]],
    times: &[f64],
) -> Result<(f64, Vec<f64>), LossError> {
    check_batch(points, times)?;
    mean_with_gradient(model, &model.params, &OdeTerm { field, points, times })
}
