use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tkrnet::loss::LossVariant;
use tkrnet::odeint::IntegratorConfig;
use tkrnet::systems::{self, SystemSpec};
use tkrnet::train::{equal_breaks, AdamWConfig, Architecture, TrainConfig};

/// A complete experiment: system, network, optimiser, grid, decomposition,
/// evaluation and output location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub architecture: Architecture,
    pub training: TrainingSection,
    pub time_grid: TimeGridSection,
    #[serde(default)]
    pub decomposition: DecompositionSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub t_final: Option<f64>,
    /// Lorenz-96 only.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Lorenz-96 only.
    #[serde(default)]
    pub forcing: Option<f64>,
    /// Replaces the initial collocation box: one `[lo, hi]` for every
    /// coordinate, or one per coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_box: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub adaptive_iters: usize,
    pub batches: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_min: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub loss: LossVariant,
}

fn default_weight_decay() -> f64 {
    AdamWConfig::default().weight_decay
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridSection {
    /// `J`, time levels per interval.
    pub time_steps: usize,
    /// `M`, spatial points per level.
    pub points_per_step: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionMode {
    #[default]
    None,
    Choice1,
    Choice2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionSection {
    pub mode: DecompositionMode,
    pub sub_intervals: usize,
    pub interface_weight: f64,
}

impl Default for DecompositionSection {
    fn default() -> Self {
        Self {
            mode: DecompositionMode::None,
            sub_intervals: 1,
            interface_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// `N_v`, reference trajectories.
    pub n_reference: usize,
    /// Metric times; empty means `metric_points` equally spaced times on `[0, T]`.
    pub times: Vec<f64>,
    pub metric_points: usize,
    /// Model draws for the moment comparison; 0 means `n_reference`.
    pub moment_samples: usize,
    pub bound_stride: usize,
    pub grid_times: Vec<f64>,
    pub grid_resolution: usize,
    /// Defaults to the first two coordinates of the collocation box.
    pub grid_box: Option<[[f64; 2]; 2]>,
    pub grid_axes: [usize; 2],
    pub integrator: IntegratorConfig,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_reference: 10_000,
            times: Vec::new(),
            metric_points: 21,
            moment_samples: 0,
            bound_stride: 1,
            grid_times: Vec::new(),
            grid_resolution: 101,
            grid_box: None,
            grid_axes: [0, 1],
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Everything a run needs, derived from a validated config.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub system: SystemSpec,
    pub train: TrainConfig,
    pub breaks: Vec<f64>,
    pub metric_times: Vec<f64>,
    pub grid_box: [[f64; 2]; 2],
    pub integrator: IntegratorConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        let s = &self.system;
        let mut spec = if s.name == "lorenz96" {
            systems::lorenz96(s.dim.unwrap_or(40), s.forcing.unwrap_or(1.0)).context("system")?
        } else {
            if s.dim.is_some() || s.forcing.is_some() {
                bail!("system.dim and system.forcing apply to lorenz96 only");
            }
            SystemSpec::by_name(&s.name).with_context(|| format!("system.name: unknown system {:?}", s.name))?
        };
        if let Some(t) = s.t_final {
            if !(t > 0.0 && t.is_finite()) {
                bail!("system.t_final: must be positive, got {t}");
            }
            spec = spec.with_final_time(t);
        }
        if let Some(b) = &s.init_box {
            let d = spec.init_box.len();
            spec.init_box = match b.len() {
                1 => vec![b[0]; d],
                n if n == d => b.clone(),
                n => bail!("system.init_box: expected 1 or {d} ranges, got {n}"),
            };
            if spec.init_box.iter().any(|&[lo, hi]| !(lo < hi && lo.is_finite() && hi.is_finite())) {
                bail!("system.init_box: every range needs finite lo < hi");
            }
        }
        Ok(spec)
    }

    pub fn train_config(&self, system: &SystemSpec) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            arch: self.architecture.clone(),
            epochs: t.epochs,
            adaptive_iters: t.adaptive_iters,
            batches: t.batches,
            lr: t.lr,
            lr_min: t.lr_min,
            adamw: AdamWConfig {
                weight_decay: t.weight_decay,
                ..AdamWConfig::default()
            },
            seed: t.seed,
            loss: t.loss,
            time_steps: self.time_grid.time_steps,
            points_per_step: self.time_grid.points_per_step,
            t_final: system.t_final,
            sub_intervals: self.decomposition.sub_intervals,
            interface_weight: self.decomposition.interface_weight,
        }
    }

    /// Checks every section and derives the run inputs. Messages name the
    /// offending field.
    pub fn resolve(&self) -> Result<Resolved> {
        let system = self.system_spec()?;
        let d = system.init_box.len();
        let a = &self.architecture;
        if a.blocks == 0 || a.blocks > d {
            bail!("architecture.blocks: must lie in 1..={d}, got {}", a.blocks);
        }
        for (name, v) in [
            ("architecture.pairs_per_block", a.pairs_per_block),
            ("architecture.hidden_layers", a.hidden_layers),
            ("training.epochs", self.training.epochs),
            ("training.adaptive_iters", self.training.adaptive_iters),
            ("training.batches", self.training.batches),
            ("time_grid.time_steps", self.time_grid.time_steps),
            ("time_grid.points_per_step", self.time_grid.points_per_step),
            ("decomposition.sub_intervals", self.decomposition.sub_intervals),
            ("evaluation.bound_stride", self.evaluation.bound_stride),
        ] {
            if v == 0 {
                bail!("{name}: must be positive");
            }
        }
        if a.hidden < 2 || a.hidden % 2 != 0 {
            bail!("architecture.hidden: must be even and at least 2, got {}", a.hidden);
        }
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            bail!("architecture.alpha: must lie in (0, 1), got {}", a.alpha);
        }
        if let Some(nl) = &a.nonlinear {
            if nl.mesh == 0 || !(nl.bound > 0.0) {
                bail!("architecture.nonlinear: needs mesh >= 1 and bound > 0");
            }
        }
        let t = &self.training;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            bail!("training.lr: must be positive, got {}", t.lr);
        }
        if !(t.lr_min >= 0.0 && t.lr_min <= t.lr) {
            bail!("training.lr_min: must lie in [0, lr], got {}", t.lr_min);
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            bail!("training.weight_decay: must be non-negative, got {}", t.weight_decay);
        }
        let dec = &self.decomposition;
        if dec.mode == DecompositionMode::None && dec.sub_intervals != 1 {
            bail!("decomposition.sub_intervals: must be 1 without a decomposition mode");
        }
        if !(dec.interface_weight >= 0.0 && dec.interface_weight.is_finite()) {
            bail!("decomposition.interface_weight: must be non-negative");
        }
        let train = self.train_config(&system);
        let per_interval = if dec.sub_intervals > 1 {
            (self.time_grid.time_steps + 1) * self.time_grid.points_per_step
        } else {
            self.time_grid.time_steps * self.time_grid.points_per_step
        };
        if t.batches > per_interval {
            bail!("training.batches: {} exceeds the {per_interval} collocation points", t.batches);
        }
        train.validate().context("training")?;

        let e = &self.evaluation;
        if e.n_reference < 2 {
            bail!("evaluation.n_reference: need at least 2 trajectories");
        }
        e.integrator.validate().context("evaluation.integrator")?;
        let t_final = system.t_final;
        let metric_times = if e.times.is_empty() {
            if e.metric_points < 2 {
                bail!("evaluation.metric_points: need at least 2");
            }
            equal_breaks(t_final, e.metric_points - 1)
        } else {
            e.times.clone()
        };
        if metric_times.windows(2).any(|w| !(w[1] > w[0])) {
            bail!("evaluation.times: must increase");
        }
        for &tm in metric_times.iter().chain(&e.grid_times) {
            if !(0.0..=t_final).contains(&tm) {
                bail!("evaluation: time {tm} lies outside [0, {t_final}]");
            }
        }
        if e.grid_resolution < 2 {
            bail!("evaluation.grid_resolution: need at least 2");
        }
        if d < 2 && !e.grid_times.is_empty() {
            bail!("evaluation.grid_times: density grids need at least two dimensions");
        }
        if e.grid_axes[0] == e.grid_axes[1] || e.grid_axes.iter().any(|&ax| ax >= d) {
            bail!("evaluation.grid_axes: need two distinct axes below {d}");
        }
        let grid_box = match e.grid_box {
            Some(b) => b,
            None => [system.init_box[e.grid_axes[0]], system.init_box[e.grid_axes[1]]],
        };
        if grid_box.iter().any(|r| !(r[1] > r[0])) {
            bail!("evaluation.grid_box: each range must be increasing");
        }
        Ok(Resolved {
            breaks: equal_breaks(t_final, dec.sub_intervals),
            system,
            train,
            metric_times,
            grid_box,
            integrator: e.integrator.clone(),
        })
    }
}

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        /// Bundled experiment presets.
        pub const PRESETS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../presets/", $name, ".toml")))),*
        ];
    };
}

presets!(
    "double_gyre_smoke",
    "double_gyre_desk",
    "double_gyre_paper",
    "double_gyre_long_choice1_paper",
    "double_gyre_long_choice2_paper",
    "kraichnan_orszag_desk",
    "kraichnan_orszag_paper",
    "duffing_desk",
    "duffing_paper",
    "lorenz96_desk",
    "lorenz96_paper",
);

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).with_context(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        format!("unknown preset {name:?}; available: {}", names.join(", "))
    })?;
    ExperimentConfig::from_toml(text).with_context(|| format!("preset {name}"))
}
