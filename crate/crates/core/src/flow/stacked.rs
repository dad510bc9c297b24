use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Lift, ParameterStore, Real};
use crate::systems::GaussianDensity;

use super::{DensityModel, FlowError, TkrNet, Trainable};

/// Index `i` with `breaks[i] < t <= breaks[i + 1]`; the left end of the
/// first interval belongs to it.
fn interval_of(breaks: &[f64], available: usize, t: f64) -> Result<usize, FlowError> {
    let lo = breaks[0];
    let hi = breaks[available];
    let tol = 1e-9 * hi.abs().max(1.0);
    if !(t >= lo - tol && t <= hi + tol) {
        return Err(FlowError::TimeDomain { t, lo, hi });
    }
    let i = breaks[1..available].partition_point(|b| *b < t);
    Ok(i.min(available - 1))
}

fn check_breaks(breaks: &[f64]) -> Result<(), FlowError> {
    if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) || breaks[0] != 0.0 {
        return Err(FlowError::Config(
            "interval breaks must start at 0 and increase strictly".into(),
        ));
    }
    Ok(())
}

/// Independent models on consecutive intervals, each anchored at `t = 0`
/// with the initial density as prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    pub breaks: Vec<f64>,
    pub models: Vec<TkrNet>,
}

impl PiecewiseModel {
    pub fn new(breaks: Vec<f64>, models: Vec<TkrNet>) -> Result<Self, FlowError> {
        check_breaks(&breaks)?;
        if models.is_empty() || models.len() > breaks.len() - 1 {
            return Err(FlowError::Config(format!(
                "{} models for {} intervals",
                models.len(),
                breaks.len() - 1
            )));
        }
        Ok(Self { breaks, models })
    }

    pub fn interval(&self, t: f64) -> Result<usize, FlowError> {
        interval_of(&self.breaks, self.models.len(), t)
    }
}

impl DensityModel for PiecewiseModel {
    fn dim(&self) -> usize {
        self.models[0].dim()
    }

    fn base(&self) -> &GaussianDensity {
        &self.models[0].prior
    }

    fn latent_to_state(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        self.models[self.interval(t)?].inverse(z, t)
    }

    fn log_density_at<S: Real>(&self, x: &[S], t: S) -> Result<S, FlowError> {
        self.models[self.interval(t.value())?].log_density_at(x, t)
    }
}

/// Chain of local models where each interval uses the density at the end
/// of the previous one as its prior:
/// `log p(x, t) = ld_i(x, t) + log p(T_i(x, t), T_{i-1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub base: GaussianDensity,
    pub breaks: Vec<f64>,
    pub nets: Vec<TkrNet>,
}

impl StackedModel {
    pub fn new(base: GaussianDensity, breaks: Vec<f64>) -> Result<Self, FlowError> {
        check_breaks(&breaks)?;
        Ok(Self {
            base,
            breaks,
            nets: Vec::new(),
        })
    }

    pub fn intervals(&self) -> usize {
        self.breaks.len() - 1
    }

    /// Appends the local model for the next interval.
    pub fn push(&mut self, net: TkrNet) -> Result<(), FlowError> {
        let i = self.nets.len();
        if i >= self.intervals() {
            return Err(FlowError::Config("all intervals already have a model".into()));
        }
        let (lo, hi) = net.time_window();
        let tol = 1e-12 * hi.abs().max(1.0);
        if (lo - self.breaks[i]).abs() > tol || (hi - self.breaks[i + 1]).abs() > tol {
            return Err(FlowError::Config(format!(
                "model window [{lo}, {hi}] does not match interval [{}, {}]",
                self.breaks[i],
                self.breaks[i + 1]
            )));
        }
        if net.dim() != self.base.dim() {
            return Err(FlowError::Dimension {
                what: "local model",
                expected: self.base.dim(),
                got: net.dim(),
            });
        }
        self.nets.push(net);
        Ok(())
    }

    pub fn interval(&self, t: f64) -> Result<usize, FlowError> {
        if self.nets.is_empty() {
            return Err(FlowError::Config("stack has no models".into()));
        }
        interval_of(&self.breaks, self.nets.len(), t)
    }

    /// Pushes `y` through the frozen models `i-1, …, 0` at their right
    /// endpoints and adds the base log-density.
    fn chain_below<S: Real>(&self, i: usize, mut y: Vec<S>, mut acc: S) -> Result<S, FlowError> {
        for j in (0..i).rev() {
            let net = &self.nets[j];
            let (z, ld) = net.transform_with(&net.params.values, &y, S::cst(self.breaks[j + 1]))?;
            y = z;
            acc = acc + ld;
        }
        Ok(acc + self.base.log_pdf_with(&y))
    }

    /// Log-density using local model `i` at `t`, with `theta` as its
    /// parameters. `t` may sit anywhere in that model's window, including
    /// its left endpoint.
    pub fn log_density_in<S: Real, P: Lift<S>>(&self, i: usize, theta: &[P], x: &[S], t: S) -> Result<S, FlowError> {
        let (y, ld) = self.nets[i].transform_with(theta, x, t)?;
        self.chain_below(i, y, ld)
    }
}

impl DensityModel for StackedModel {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn base(&self) -> &GaussianDensity {
        &self.base
    }

    /// Inverts the earlier models at their right endpoints, then the local
    /// model at `t`.
    fn latent_to_state(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        let i = self.interval(t)?;
        let mut y = z.to_vec();
        for j in 0..i {
            y = self.nets[j].inverse(&y, self.breaks[j + 1])?;
        }
        self.nets[i].inverse(&y, t)
    }

    fn log_density_at<S: Real>(&self, x: &[S], t: S) -> Result<S, FlowError> {
        let i = self.interval(t.value())?;
        self.log_density_in(i, &self.nets[i].params.values, x, t)
    }

    fn sample<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, FlowError> {
        let zs = self.base.sample(rng, n);
        zs.iter().map(|z| self.latent_to_state(z, t)).collect()
    }
}

/// Trains the newest local model; earlier ones are frozen. The newest model
/// also covers the left end of its window, where it agrees with the chain.
impl Trainable for StackedModel {
    fn params(&self) -> &ParameterStore {
        &self.nets.last().expect("stack has a model").params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.nets.last_mut().expect("stack has a model").params
    }

    fn log_density_with<S: Real, P: Lift<S>>(&self, theta: &[P], x: &[S], t: S) -> Result<S, FlowError> {
        let last = self.nets.len() - 1;
        let (lo, _) = self.nets[last].time_window();
        if t.value() >= lo {
            self.log_density_in(last, theta, x, t)
        } else {
            self.log_density_at(x, t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn local(lo: f64, hi: f64, seed: u64) -> TkrNet {
        let cfg = FlowConfig {
            pairs_per_block: 2,
            hidden: 8,
            hidden_layers: 1,
            nonlinear: None,
            origin: lo,
            origin_input: true,
            seed,
            ..FlowConfig::new(2, hi - lo)
        };
        let mut net = TkrNet::new(cfg, GaussianDensity::standard(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in net.params.values.iter_mut() {
            *v += 0.3 * rng.random_range(-1.0..1.0);
        }
        net
    }

    fn stack3() -> StackedModel {
        let base = GaussianDensity::isotropic(vec![1.0, 0.5], 0.3);
        let mut s = StackedModel::new(base, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        for i in 0..3 {
            s.push(local(i as f64, i as f64 + 1.0, i as u64)).unwrap();
        }
        s
    }

    #[test]
    fn intervals_are_left_open() {
        let s = stack3();
        assert_eq!(s.interval(0.0).unwrap(), 0);
        assert_eq!(s.interval(1.0).unwrap(), 0);
        assert_eq!(s.interval(1.0 + 1e-6).unwrap(), 1);
        assert_eq!(s.interval(3.0).unwrap(), 2);
        assert!(s.interval(3.5).is_err());
    }

    #[test]
    fn continuity_at_interfaces() {
        let s = stack3();
        let x = [0.7, 0.2];
        for i in 1..3 {
            let tb = s.breaks[i];
            let prev = s.log_density_at(&x, tb).unwrap();
            let next = s.log_density_in(i, &s.nets[i].params.values, &x, tb).unwrap();
            assert_eq!(prev, next);
        }
    }

    #[test]
    fn rejects_mismatched_window() {
        let base = GaussianDensity::standard(2);
        let mut s = StackedModel::new(base, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(s.push(local(0.5, 1.0, 0)).is_err());
        s.push(local(0.0, 1.0, 0)).unwrap();
        s.push(local(1.0, 2.0, 0)).unwrap();
        assert!(s.push(local(1.0, 2.0, 0)).is_err());
    }

    #[test]
    fn sample_inverts_density_chain() {
        let s = stack3();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = s.base.sample_one(&mut rng);
        let t = 2.4;
        let x = s.latent_to_state(&z, t).unwrap();
        // forward chain returns the latent draw
        let (mut y, _) = s.nets[2].transform(&x, t).unwrap();
        for j in (0..2).rev() {
            y = s.nets[j].transform(&y, s.breaks[j + 1]).unwrap().0;
        }
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
