//! Benchmark dynamical systems with random initial data.
//!
//! Each system carries its vector field (generic over [`Real`] so it can be
//! evaluated on tapes), the analytic divergence, a Gaussian initial density
//! and the box used for the first batch of collocation points.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("dimension mismatch: {what} has {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown system `{0}`")]
    Unknown(String),
    #[error("invalid system parameter: {0}")]
    Invalid(String),
}

/// Product Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self, SystemError> {
        if mean.len() != std.len() {
            return Err(SystemError::Dimension {
                what: "std",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(SystemError::Invalid("standard deviations must be positive".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn isotropic(mean: Vec<f64>, std: f64) -> Self {
        let d = mean.len();
        Self {
            mean,
            std: vec![std; d],
        }
    }

    pub fn standard(d: usize) -> Self {
        Self::isotropic(vec![0.0; d], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Product of two independent Gaussians over stacked coordinates.
    pub fn concat(&self, other: &GaussianDensity) -> GaussianDensity {
        GaussianDensity {
            mean: self.mean.iter().chain(&other.mean).copied().collect(),
            std: self.std.iter().chain(&other.std).copied().collect(),
        }
    }

    fn log_norm(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>() - 0.5 * self.dim() as f64 * (2.0 * PI).ln()
    }

    pub fn log_pdf_with<S: Real>(&self, x: &[S]) -> S {
        let quad = S::sum(
            x.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(&xi, (&m, &s))| xi.offset(-m).scale(1.0 / s).powi(2)),
        );
        quad.scale(-0.5).offset(self.log_norm())
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf_with(x)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let e: f64 = rng.sample(StandardNormal);
                m + s * e
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Right-hand side `f(x, t)` of an autonomous or forced ODE system.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval<S: Real>(&self, x: &[S], t: S, out: &mut [S]);
    fn divergence<S: Real>(&self, x: &[S], t: S) -> S;

    fn field(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, t, &mut out);
        out
    }

    fn field_with<S: Real>(&self, x: &[S], t: S) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim()];
        self.eval(x, t, &mut out);
        out
    }
}

/// `g(y, ξ, t)` for a state `y` driven by fixed random parameters `ξ`.
pub trait ParametricField: Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval<S: Real>(&self, y: &[S], xi: &[S], t: S, out: &mut [S]);
    /// Divergence with respect to `y` only.
    fn divergence<S: Real>(&self, y: &[S], xi: &[S], t: S) -> S;
}

/// State `[y, ξ]` with `f = [g; 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmented<G> {
    pub inner: G,
}

impl<G: ParametricField> VectorField for Augmented<G> {
    fn dim(&self) -> usize {
        self.inner.state_dim() + self.inner.param_dim()
    }

    fn eval<S: Real>(&self, x: &[S], t: S, out: &mut [S]) {
        let n = self.inner.state_dim();
        let (y, xi) = x.split_at(n);
        let (gy, rest) = out.split_at_mut(n);
        self.inner.eval(y, xi, t, gy);
        rest.fill(S::zero());
    }

    fn divergence<S: Real>(&self, x: &[S], t: S) -> S {
        let (y, xi) = x.split_at(self.inner.state_dim());
        self.inner.divergence(y, xi, t)
    }
}

/// Builds the augmented field and the product initial density
/// `p0(x) = p_y(y, 0) p_ξ(ξ)`.
pub fn augment<G: ParametricField>(
    g: G,
    state_density: &GaussianDensity,
    param_density: &GaussianDensity,
) -> Result<(Augmented<G>, GaussianDensity), SystemError> {
    if state_density.dim() != g.state_dim() {
        return Err(SystemError::Dimension {
            what: "state density",
            expected: g.state_dim(),
            got: state_density.dim(),
        });
    }
    if param_density.dim() != g.param_dim() {
        return Err(SystemError::Dimension {
            what: "parameter density",
            expected: g.param_dim(),
            got: param_density.dim(),
        });
    }
    Ok((Augmented { inner: g }, state_density.concat(param_density)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleGyre {
    pub amplitude: f64,
    pub omega: f64,
    pub epsilon: f64,
}

impl Default for DoubleGyre {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            omega: 2.0 * PI / 10.0,
            epsilon: 0.25,
        }
    }
}

impl DoubleGyre {
    pub fn a(&self, t: f64) -> f64 {
        self.epsilon * (self.omega * t).sin()
    }

    pub fn b(&self, t: f64) -> f64 {
        1.0 - 2.0 * self.epsilon * (self.omega * t).sin()
    }

    fn coeffs<S: Real>(&self, t: S) -> (S, S) {
        let sw = t.scale(self.omega).sin();
        (sw.scale(self.epsilon), sw.scale(-2.0 * self.epsilon).offset(1.0))
    }
}

impl VectorField for DoubleGyre {
    fn dim(&self) -> usize {
        2
    }

    fn eval<S: Real>(&self, x: &[S], t: S, out: &mut [S]) {
        let (a, b) = self.coeffs(t);
        let f = a * x[0] * x[0] + b * x[0];
        let df = a * x[0].scale(2.0) + b;
        let pa = PI * self.amplitude;
        let pf = f.scale(PI);
        let px2 = x[1].scale(PI);
        out[0] = (pf.sin() * px2.cos()).scale(-pa);
        out[1] = (pf.cos() * px2.sin() * df).scale(pa);
    }

    fn divergence<S: Real>(&self, _x: &[S], _t: S) -> S {
        S::zero()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KraichnanOrszag;

impl VectorField for KraichnanOrszag {
    fn dim(&self) -> usize {
        3
    }

    fn eval<S: Real>(&self, x: &[S], _t: S, out: &mut [S]) {
        out[0] = x[0] * x[2];
        out[1] = -(x[1] * x[2]);
        out[2] = x[1] * x[1] - x[0] * x[0];
    }

    fn divergence<S: Real>(&self, _x: &[S], _t: S) -> S {
        S::zero()
    }
}

/// Forced Duffing oscillator with parameters `ξ = (δ, α, β, γ, ω)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Duffing;

impl ParametricField for Duffing {
    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        5
    }

    fn eval<S: Real>(&self, y: &[S], xi: &[S], t: S, out: &mut [S]) {
        let (delta, alpha, beta, gamma, omega) = (xi[0], xi[1], xi[2], xi[3], xi[4]);
        out[0] = y[1];
        out[1] = -(delta * y[1]) - y[0] * (alpha + beta * y[0] * y[0]) + gamma * (omega * t).cos();
    }

    fn divergence<S: Real>(&self, _y: &[S], xi: &[S], _t: S) -> S {
        -xi[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96 {
    pub dim: usize,
    pub forcing: f64,
}

impl VectorField for Lorenz96 {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval<S: Real>(&self, x: &[S], _t: S, out: &mut [S]) {
        let d = self.dim;
        for i in 0..d {
            let next = x[(i + 1) % d];
            let prev = x[(i + d - 1) % d];
            let prev2 = x[(i + d - 2) % d];
            out[i] = ((next - prev2) * prev - x[i]).offset(self.forcing);
        }
    }

    fn divergence<S: Real>(&self, _x: &[S], _t: S) -> S {
        S::cst(-(self.dim as f64))
    }
}

/// `f(x) = -rate · x`; the transported Gaussian is known in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDecay {
    pub dim: usize,
    pub rate: f64,
}

impl VectorField for LinearDecay {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval<S: Real>(&self, x: &[S], _t: S, out: &mut [S]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = xi.scale(-self.rate);
        }
    }

    fn divergence<S: Real>(&self, _x: &[S], _t: S) -> S {
        S::cst(-self.rate * self.dim as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Field {
    DoubleGyre(DoubleGyre),
    KraichnanOrszag(KraichnanOrszag),
    Duffing(Augmented<Duffing>),
    Lorenz96(Lorenz96),
    LinearDecay(LinearDecay),
}

macro_rules! dispatch {
    ($self:expr, $f:ident => $body:expr) => {
        match $self {
            Field::DoubleGyre($f) => $body,
            Field::KraichnanOrszag($f) => $body,
            Field::Duffing($f) => $body,
            Field::Lorenz96($f) => $body,
            Field::LinearDecay($f) => $body,
        }
    };
}

impl VectorField for Field {
    fn dim(&self) -> usize {
        dispatch!(self, f => f.dim())
    }

    fn eval<S: Real>(&self, x: &[S], t: S, out: &mut [S]) {
        dispatch!(self, f => f.eval(x, t, out))
    }

    fn divergence<S: Real>(&self, x: &[S], t: S) -> S {
        dispatch!(self, f => f.divergence(x, t))
    }
}

/// A benchmark problem: dynamics, initial density, collocation box, horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub field: Field,
    pub initial: GaussianDensity,
    pub init_box: Vec<[f64; 2]>,
    pub t_final: f64,
}

impl VectorField for SystemSpec {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval<S: Real>(&self, x: &[S], t: S, out: &mut [S]) {
        self.field.eval(x, t, out)
    }

    fn divergence<S: Real>(&self, x: &[S], t: S) -> S {
        self.field.divergence(x, t)
    }
}

impl SystemSpec {
    pub fn log_p0(&self, x: &[f64]) -> f64 {
        self.initial.log_pdf(x)
    }

    pub fn sample_p0<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        self.initial.sample(rng, n)
    }

    pub fn with_final_time(mut self, t_final: f64) -> Self {
        self.t_final = t_final;
        self
    }

    /// Looks up a benchmark by the name used in experiment configs.
    pub fn by_name(name: &str) -> Result<Self, SystemError> {
        match name {
            "double_gyre" => Ok(double_gyre()),
            "kraichnan_orszag" => Ok(kraichnan_orszag()),
            "duffing" => Ok(duffing()),
            "lorenz96" => lorenz96(40, 1.0),
            other => Err(SystemError::Unknown(other.to_string())),
        }
    }
}

pub const SYSTEM_NAMES: [&str; 4] = ["double_gyre", "kraichnan_orszag", "duffing", "lorenz96"];

pub fn double_gyre() -> SystemSpec {
    SystemSpec {
        name: "double_gyre".into(),
        field: Field::DoubleGyre(DoubleGyre::default()),
        initial: GaussianDensity::isotropic(vec![1.0, 0.5], 0.05),
        init_box: vec![[0.0, 2.0], [0.0, 1.0]],
        t_final: 5.0,
    }
}

pub fn kraichnan_orszag() -> SystemSpec {
    SystemSpec {
        name: "kraichnan_orszag".into(),
        field: Field::KraichnanOrszag(KraichnanOrszag),
        initial: GaussianDensity::isotropic(vec![1.0, 0.0, 0.0], 0.5),
        init_box: vec![[-5.0, 5.0]; 3],
        t_final: 3.0,
    }
}

pub fn duffing() -> SystemSpec {
    let state = GaussianDensity::standard(2);
    let params = GaussianDensity::isotropic(vec![0.5, -1.0, 1.0, 0.5, 1.0], 0.25);
    let (field, initial) = augment(Duffing, &state, &params).expect("duffing dimensions");
    SystemSpec {
        name: "duffing".into(),
        field: Field::Duffing(field),
        initial,
        init_box: vec![[-5.0, 5.0]; 7],
        t_final: 2.0,
    }
}

/// Means `0.5 - |i/d - 0.5|` for `i = 1..=d`, standard deviation 1/5.
pub fn lorenz96(dim: usize, forcing: f64) -> Result<SystemSpec, SystemError> {
    if dim < 4 {
        return Err(SystemError::Invalid(format!("lorenz96 needs d >= 4, got {dim}")));
    }
    let mean = (1..=dim)
        .map(|i| 0.5 - (i as f64 / dim as f64 - 0.5).abs())
        .collect();
    Ok(SystemSpec {
        name: "lorenz96".into(),
        field: Field::Lorenz96(Lorenz96 { dim, forcing }),
        initial: GaussianDensity::isotropic(mean, 0.2),
        init_box: vec![[-5.0, 5.0]; dim],
        t_final: 1.0,
    })
}

/// One-dimensional (or isotropic) linear decay from a standard normal.
pub fn linear_decay(dim: usize, rate: f64) -> SystemSpec {
    SystemSpec {
        name: "linear_decay".into(),
        field: Field::LinearDecay(LinearDecay { dim, rate }),
        initial: GaussianDensity::standard(dim),
        init_box: vec![[-4.0, 4.0]; dim],
        t_final: 1.0,
    }
}
