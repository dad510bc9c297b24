//! Time-dependent KRnet: block-triangular composition of scale-bias and
//! affine coupling layers with partition freezing, followed by an optional
//! coordinate-wise nonlinear layer. At `t = origin` every layer is the
//! identity, so the model density equals its prior there.

mod checkpoint;
mod layers;
mod stacked;

pub use checkpoint::{load_checkpoint, save_checkpoint, AnyModel, CHECKPOINT_FORMAT};
pub use layers::{
    coupling_restore, coupling_update, CouplingLayer, Dense, NonlinearConfig, NonlinearLayer, QuadraticCdf,
    ScaleBiasLayer,
};
pub use stacked::{PiecewiseModel, StackedModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{Lift, ParameterStore, Real};
use crate::systems::GaussianDensity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid flow config: {0}")]
    Config(String),
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("time {t} outside the model domain [{lo}, {hi}]")]
    TimeDomain { t: f64, lo: f64, hi: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn default_alpha() -> f64 {
    0.6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub dim: usize,
    /// Number of blocks `K`; also the number of partitions.
    pub blocks: usize,
    /// (scale-bias, coupling) pairs per block, `L`.
    pub pairs_per_block: usize,
    /// Width `d_h` of the Fourier layer and the hidden layers.
    pub hidden: usize,
    /// Fully connected hidden layers per coupling network.
    pub hidden_layers: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub nonlinear: Option<NonlinearConfig>,
    /// Length of the time window the model covers.
    pub horizon: f64,
    /// Start of the time window; layers are the identity here.
    #[serde(default)]
    pub origin: f64,
    /// Feed the window start to the coupling networks as an extra input.
    #[serde(default)]
    pub origin_input: bool,
    pub seed: u64,
}

impl FlowConfig {
    pub fn new(dim: usize, horizon: f64) -> Self {
        Self {
            dim,
            blocks: 1,
            pairs_per_block: 4,
            hidden: 32,
            hidden_layers: 2,
            alpha: default_alpha(),
            nonlinear: Some(NonlinearConfig::default()),
            horizon,
            origin: 0.0,
            origin_input: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.blocks == 0 || self.blocks > self.dim {
            return bad("blocks must lie in 1..=dim");
        }
        if self.pairs_per_block == 0 {
            return bad("pairs_per_block must be positive");
        }
        if self.hidden < 2 || self.hidden % 2 != 0 {
            return bad("hidden width must be even and at least 2");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !self.origin.is_finite() || self.origin < 0.0 {
            return bad("origin must be finite and non-negative");
        }
        if let Some(nl) = &self.nonlinear {
            if nl.mesh == 0 || !(nl.bound > 0.0) {
                return bad("nonlinear layer needs mesh >= 1 and bound > 0");
            }
        }
        Ok(())
    }

    /// Near-equal partition sizes, larger parts first.
    pub fn partition(&self) -> Vec<usize> {
        let (q, r) = (self.dim / self.blocks, self.dim % self.blocks);
        (0..self.blocks).map(|i| q + usize::from(i < r)).collect()
    }

    /// Number of coordinates still active in each block.
    pub fn active_dims(&self) -> Vec<usize> {
        let part = self.partition();
        (0..self.blocks)
            .map(|i| part[..self.blocks - i].iter().sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    ScaleBias(ScaleBiasLayer),
    Coupling(CouplingLayer),
}

/// Local time, horizon fraction and network time inputs for one evaluation.
struct Clock<S> {
    tau: S,
    frac: S,
    time_in: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TkrNet {
    pub config: FlowConfig,
    pub layers: Vec<Layer>,
    pub nonlinear: Option<NonlinearLayer>,
    pub params: ParameterStore,
    pub buffers: ParameterStore,
    pub prior: GaussianDensity,
}

impl TkrNet {
    pub fn new(config: FlowConfig, prior: GaussianDensity) -> Result<Self, FlowError> {
        config.validate()?;
        if prior.dim() != config.dim {
            return Err(FlowError::Dimension {
                what: "prior",
                expected: config.dim,
                got: prior.dim(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterStore::new();
        let mut buffers = ParameterStore::new();
        let mut layers = Vec::new();
        let time_inputs = if config.origin_input { 2 } else { 1 };
        for (b, &active) in config.active_dims().iter().enumerate() {
            for l in 0..config.pairs_per_block {
                let name = format!("block{b}.pair{l}");
                layers.push(Layer::ScaleBias(ScaleBiasLayer::build(
                    &format!("{name}.scale_bias"),
                    active,
                    &mut params,
                )));
                layers.push(Layer::Coupling(CouplingLayer::build(
                    &format!("{name}.coupling"),
                    active,
                    l % 2 == 1,
                    config.alpha,
                    config.hidden,
                    config.hidden_layers,
                    time_inputs,
                    &mut params,
                    &mut buffers,
                    &mut rng,
                )));
            }
        }
        let nonlinear = config
            .nonlinear
            .as_ref()
            .map(|nl| NonlinearLayer::build("nonlinear", config.dim, nl, &mut params));
        Ok(Self {
            config,
            layers,
            nonlinear,
            params,
            buffers,
            prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn time_window(&self) -> (f64, f64) {
        (self.config.origin, self.config.origin + self.config.horizon)
    }

    fn clock<S: Real>(&self, t: S) -> Result<Clock<S>, FlowError> {
        let (lo, hi) = self.time_window();
        let tol = 1e-9 * hi.abs().max(1.0);
        let tv = t.value();
        if !(tv >= lo - tol && tv <= hi + tol) {
            return Err(FlowError::TimeDomain { t: tv, lo, hi });
        }
        let tau = if lo == 0.0 { t } else { t.offset(-lo) };
        let frac = tau.scale(1.0 / self.config.horizon);
        let time_in = if self.config.origin_input {
            vec![tau, S::cst(lo)]
        } else {
            vec![tau]
        };
        Ok(Clock { tau, frac, time_in })
    }

    fn check_inputs<P>(&self, theta: &[P], n: usize) -> Result<(), FlowError> {
        if theta.len() != self.params.len() {
            return Err(FlowError::Dimension {
                what: "parameter vector",
                expected: self.params.len(),
                got: theta.len(),
            });
        }
        if n != self.dim() {
            return Err(FlowError::Dimension {
                what: "point",
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }

    /// `z = T(x, t; θ)` and `log |det ∇_x T|`.
    pub fn transform_with<S: Real, P: Lift<S>>(&self, theta: &[P], x: &[S], t: S) -> Result<(Vec<S>, S), FlowError> {
        self.check_inputs(theta, x.len())?;
        let clk = self.clock(t)?;
        let buf = &self.buffers.values;
        let mut z = x.to_vec();
        let mut logs = Vec::with_capacity(self.layers.len() + 1);
        for layer in &self.layers {
            logs.push(match layer {
                Layer::ScaleBias(l) => l.forward(theta, &mut z, clk.tau),
                Layer::Coupling(l) => l.forward(theta, buf, &mut z, clk.frac, &clk.time_in),
            });
        }
        if let Some(nl) = &self.nonlinear {
            logs.push(nl.forward(theta, &mut z, clk.tau));
        }
        Ok((z, S::sum(logs.into_iter())))
    }

    /// `x = T^{-1}(z, t; θ)`.
    pub fn inverse_with<S: Real, P: Lift<S>>(&self, theta: &[P], z: &[S], t: S) -> Result<Vec<S>, FlowError> {
        self.check_inputs(theta, z.len())?;
        let clk = self.clock(t)?;
        let buf = &self.buffers.values;
        let mut x = z.to_vec();
        if let Some(nl) = &self.nonlinear {
            nl.inverse(theta, &mut x, clk.tau);
        }
        for layer in self.layers.iter().rev() {
            match layer {
                Layer::ScaleBias(l) => l.inverse(theta, &mut x, clk.tau),
                Layer::Coupling(l) => l.inverse(theta, buf, &mut x, clk.frac, &clk.time_in),
            }
        }
        Ok(x)
    }

    pub fn transform(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, f64), FlowError> {
        self.transform_with(&self.params.values, x, t)
    }

    pub fn inverse(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        self.inverse_with(&self.params.values, z, t)
    }
}

/// A normalised density over `R^d` indexed by time, with exact sampling.
pub trait DensityModel: Sync {
    fn dim(&self) -> usize;

    /// Reference distribution of the latent variable.
    fn base(&self) -> &GaussianDensity;

    /// Maps a latent draw to state space at time `t`.
    fn latent_to_state(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError>;

    /// Log-density with the model's own parameters, on any scalar type.
    fn log_density_at<S: Real>(&self, x: &[S], t: S) -> Result<S, FlowError>;

    fn log_density(&self, x: &[f64], t: f64) -> Result<f64, FlowError> {
        self.log_density_at(x, t)
    }

    /// Exact draws: latent samples pushed through the inverse map.
    fn sample<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, FlowError> {
        let zs = self.base().sample(rng, n);
        zs.par_iter().map(|z| self.latent_to_state(z, t)).collect()
    }
}

/// A density model whose log-density can be evaluated at arbitrary
/// parameter values, e.g. adjoint leaves on a tape.
pub trait Trainable: DensityModel {
    fn params(&self) -> &ParameterStore;
    fn params_mut(&mut self) -> &mut ParameterStore;
    fn log_density_with<S: Real, P: Lift<S>>(&self, theta: &[P], x: &[S], t: S) -> Result<S, FlowError>;
}

impl DensityModel for TkrNet {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn base(&self) -> &GaussianDensity {
        &self.prior
    }

    fn latent_to_state(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        self.inverse(z, t)
    }

    fn log_density_at<S: Real>(&self, x: &[S], t: S) -> Result<S, FlowError> {
        self.log_density_with(&self.params.values, x, t)
    }
}

impl Trainable for TkrNet {
    fn params(&self) -> &ParameterStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn log_density_with<S: Real, P: Lift<S>>(&self, theta: &[P], x: &[S], t: S) -> Result<S, FlowError> {
        let (z, ld) = self.transform_with(theta, x, t)?;
        Ok(self.prior.log_pdf_with(&z) + ld)
    }
}
