use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Real;
use crate::systems::GaussianDensity;

use super::layers::check_offsets;
use super::{DensityModel, FlowError, Layer, PiecewiseModel, StackedModel, TkrNet};

pub const CHECKPOINT_FORMAT: &str = "tkrnet-checkpoint";
const VERSION: u32 = 1;

/// Any trained model the library produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyModel {
    Single(TkrNet),
    Piecewise(PiecewiseModel),
    Stacked(StackedModel),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: AnyModel,
}

impl AnyModel {
    pub fn nets(&self) -> Vec<&TkrNet> {
        match self {
            AnyModel::Single(n) => vec![n],
            AnyModel::Piecewise(p) => p.models.iter().collect(),
            AnyModel::Stacked(s) => s.nets.iter().collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, FlowError> {
        let env = Envelope {
            format: CHECKPOINT_FORMAT.into(),
            version: VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&env).map_err(|e| FlowError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, FlowError> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
        if env.format != CHECKPOINT_FORMAT || env.version != VERSION {
            return Err(FlowError::Checkpoint(format!(
                "unsupported format {} v{}",
                env.format, env.version
            )));
        }
        for net in env.model.nets() {
            validate_net(net)?;
        }
        Ok(env.model)
    }
}

/// The stored layout must be exactly what the stored config builds.
fn validate_net(net: &TkrNet) -> Result<(), FlowError> {
    let fresh = TkrNet::new(net.config.clone(), net.prior.clone())?;
    if fresh.layers != net.layers
        || fresh.nonlinear != net.nonlinear
        || fresh.params.segments != net.params.segments
        || fresh.buffers.segments != net.buffers.segments
    {
        return Err(FlowError::Checkpoint("layer layout does not match the stored config".into()));
    }
    check_offsets(fresh.params.len(), &net.params, "parameter")?;
    check_offsets(fresh.buffers.len(), &net.buffers, "buffer")?;
    if net.params.len() != fresh.params.len() || net.buffers.len() != fresh.buffers.len() {
        return Err(FlowError::Checkpoint("parameter vector length mismatch".into()));
    }
    if net.layers.iter().any(|l| matches!(l, Layer::Coupling(c) if c.alpha != net.config.alpha)) {
        return Err(FlowError::Checkpoint("coupling alpha differs from config".into()));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &AnyModel) -> Result<(), FlowError> {
    fs::write(path, model.to_json()?).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel, FlowError> {
    let text = fs::read_to_string(path).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))?;
    AnyModel::from_json(&text)
}

impl DensityModel for AnyModel {
    fn dim(&self) -> usize {
        match self {
            AnyModel::Single(m) => m.dim(),
            AnyModel::Piecewise(m) => m.dim(),
            AnyModel::Stacked(m) => DensityModel::dim(m),
        }
    }

    fn base(&self) -> &GaussianDensity {
        match self {
            AnyModel::Single(m) => m.base(),
            AnyModel::Piecewise(m) => m.base(),
            AnyModel::Stacked(m) => m.base(),
        }
    }

    fn latent_to_state(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        match self {
            AnyModel::Single(m) => m.latent_to_state(z, t),
            AnyModel::Piecewise(m) => m.latent_to_state(z, t),
            AnyModel::Stacked(m) => m.latent_to_state(z, t),
        }
    }

    fn log_density_at<S: Real>(&self, x: &[S], t: S) -> Result<S, FlowError> {
        match self {
            AnyModel::Single(m) => m.log_density_at(x, t),
            AnyModel::Piecewise(m) => m.log_density_at(x, t),
            AnyModel::Stacked(m) => m.log_density_at(x, t),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, FlowError> {
        match self {
            AnyModel::Single(m) => m.sample(t, n, rng),
            AnyModel::Piecewise(m) => m.sample(t, n, rng),
            AnyModel::Stacked(m) => m.sample(t, n, rng),
        }
    }
}
