//! Time-dependent KRnet density models trained on Liouville residuals.

pub mod diffcore;
pub mod eval;
pub mod flow;
pub mod loss;
pub mod odeint;
pub mod systems;
pub mod train;

pub use diffcore::{Real, Tangent, Tape, Var};

/// Forward-mode bundle over `f64` with `N` directions.
pub type Tangent64<const N: usize> = Tangent<f64, N>;
pub type Tangent32<const N: usize> = Tangent<f32, N>;
/// Forward-mode bundle over tape variables: input derivatives whose
/// parameter gradients are recorded.
pub type TapeTangent<'t, const N: usize> = Tangent<Var<'t>, N>;
pub type QuadraticCdf64 = flow::QuadraticCdf<f64>;
