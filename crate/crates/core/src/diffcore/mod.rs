//! Exact differentiation of scalar programs.
//!
//! Models are written generically over [`Real`]. Evaluating them with
//! [`Tangent`] yields directional derivatives in `(x, t)`; with [`Var`] on a
//! [`Tape`] yields parameter gradients; with `Tangent<Var, N>` yields
//! parameter gradients of expressions that themselves contain input
//! derivatives (forward-over-reverse). Finite differences never appear on
//! these paths.

mod params;
mod real;
mod tangent;
mod tape;

pub use params::{ParameterStore, Segment};
pub use real::{Lift, Real};
pub use tangent::Tangent;
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("non-finite value produced by operation #{op}")]
    NonFiniteValue { op: usize },
    #[error("non-finite gradient entry in segment `{segment}` (index {index})")]
    NonFiniteGradient { segment: String, index: usize },
    #[error("no derivative directions given")]
    NoDirections,
    #[error("direction has length {got}, expected {expected}")]
    DirectionLength { expected: usize, got: usize },
}

/// Scalar program of a space point and a time.
pub trait ScalarField {
    fn eval<S: Real>(&self, x: &[S], t: S) -> S;
}

/// Directions processed per forward pass.
const CHUNK: usize = 4;

/// Value of `program` at `(x, t)` and its exact derivative along each
/// `(d+1)`-vector in `directions` (space components first, time last).
pub fn directional_derivatives<P: ScalarField>(
    program: &P,
    x: &[f64],
    t: f64,
    directions: &[Vec<f64>],
) -> Result<(f64, Vec<f64>), DiffError> {
    if directions.is_empty() {
        return Err(DiffError::NoDirections);
    }
    let d = x.len();
    if let Some(bad) = directions.iter().find(|v| v.len() != d + 1) {
        return Err(DiffError::DirectionLength {
            expected: d + 1,
            got: bad.len(),
        });
    }
    let mut value = f64::NAN;
    let mut derivs = Vec::with_capacity(directions.len());
    for chunk in directions.chunks(CHUNK) {
        let xs: Vec<Tangent<f64, CHUNK>> = (0..d)
            .map(|j| {
                Tangent::new(
                    x[j],
                    std::array::from_fn(|k| chunk.get(k).map_or(0.0, |v| v[j])),
                )
            })
            .collect();
        let ts = Tangent::new(t, std::array::from_fn(|k| chunk.get(k).map_or(0.0, |v| v[d])));
        let y = program.eval(&xs, ts);
        value = y.v;
        derivs.extend_from_slice(&y.d[..chunk.len()]);
    }
    if !value.is_finite() || derivs.iter().any(|v| !v.is_finite()) {
        return Err(locate_non_finite(program, x, t, directions));
    }
    Ok((value, derivs))
}

/// Replays the program on a tape to find the first offending operation.
fn locate_non_finite<P: ScalarField>(
    program: &P,
    x: &[f64],
    t: f64,
    directions: &[Vec<f64>],
) -> DiffError {
    let tape = Tape::new();
    let d = x.len();
    for dir in directions {
        tape.clear();
        let xs: Vec<Tangent<Var, 1>> = (0..d)
            .map(|j| Tangent::new(tape.var(x[j]), [Var::constant(dir[j])]))
            .collect();
        let ts = Tangent::new(tape.var(t), [Var::constant(dir[d])]);
        let _ = program.eval(&xs, ts);
        if let Some(op) = tape.first_non_finite() {
            return DiffError::NonFiniteValue { op };
        }
    }
    DiffError::NonFiniteValue { op: tape.len() }
}

/// Value and gradient of a loss program over the trainable parameters of
/// `store`. Frozen buffers live outside the store and receive nothing.
pub fn parameter_gradient<F>(store: &ParameterStore, loss: F) -> Result<(f64, Vec<f64>), DiffError>
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let theta = tape.vars(&store.values);
    let out = loss(&theta);
    if !out.value().is_finite() {
        let op = tape.first_non_finite().unwrap_or(tape.len());
        return Err(DiffError::NonFiniteValue { op });
    }
    let grad = tape.gradient(out, store.len());
    check_gradient(store, &grad)?;
    Ok((out.value(), grad))
}

/// Rejects non-finite gradient entries, naming the segment they belong to.
pub fn check_gradient(store: &ParameterStore, grad: &[f64]) -> Result<(), DiffError> {
    match grad.iter().position(|g| !g.is_finite()) {
        None => Ok(()),
        Some(index) => Err(DiffError::NonFiniteGradient {
            segment: store
                .segment_of(index)
                .map_or_else(|| "<unnamed>".to_string(), |s| s.name.clone()),
            index,
        }),
    }
}
