//! The time-dependent bijections composed by [`TkrNet`](super::TkrNet).
//!
//! Layers hold offsets into the trainable parameter vector and the frozen
//! buffer vector; evaluation is generic over the scalar type so the same
//! code runs on floats, tangent bundles and tape variables.

use std::ops::Range;

use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Lift, ParameterStore, Real};

use super::FlowError;

#[inline]
fn lift<S: Real, P: Lift<S>>(theta: &[P], i: usize) -> S {
    theta[i].lift()
}

/// `x̃ = x + f(αx tanh s + e^β tanh t)` and its log-derivative
/// `ln(1 + αf tanh s)`, with `f` the elapsed fraction of the horizon.
pub fn coupling_update<S: Real>(x: S, tanh_s: S, tanh_t: S, exp_beta: S, alpha: f64, frac: S) -> (S, S) {
    let factor = S::cst(1.0) + (frac * tanh_s).scale(alpha);
    (x * factor + frac * exp_beta * tanh_t, factor.ln())
}

/// Inverse of [`coupling_update`]; the divisor is at least `1 - α`.
pub fn coupling_restore<S: Real>(y: S, tanh_s: S, tanh_t: S, exp_beta: S, alpha: f64, frac: S) -> S {
    let factor = S::cst(1.0) + (frac * tanh_s).scale(alpha);
    (y - frac * exp_beta * tanh_t) / factor
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Affine coupling layer acting on the leading `active` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub active: usize,
    pub split: usize,
    pub swap: bool,
    pub alpha: f64,
    pub hidden: usize,
    /// Time-like inputs appended to the conditioner: `[t]` or `[t - T0, T0]`.
    pub time_inputs: usize,
    pub beta: usize,
    pub sigma: usize,
    pub dense: Vec<Dense>,
    pub fourier: usize,
    pub phase: usize,
}

impl CouplingLayer {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build<R: Rng>(
        name: &str,
        active: usize,
        swap: bool,
        alpha: f64,
        hidden: usize,
        hidden_layers: usize,
        time_inputs: usize,
        params: &mut ParameterStore,
        buffers: &mut ParameterStore,
        rng: &mut R,
    ) -> Self {
        let split = active / 2;
        let swap = swap && split > 0;
        let (cond, trans) = if swap {
            (active - split, split)
        } else {
            (split, active - split)
        };
        let n0 = cond + time_inputs;
        let half = hidden / 2;
        let fourier = buffers.push(
            format!("{name}.F"),
            (0..half * n0).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let phase_dist = Uniform::new(0.0, 2.0 * std::f64::consts::PI).expect("valid range");
        let phase = buffers.push(format!("{name}.b0"), (0..half).map(|_| rng.sample(phase_dist)));
        let beta = params.push(format!("{name}.beta"), vec![0.0; trans]);
        let sigma = params.push(format!("{name}.sigma"), [0.0]);
        let mut dense = Vec::with_capacity(hidden_layers + 1);
        let mut cols = hidden + n0;
        for l in 0..=hidden_layers {
            let rows = if l == hidden_layers { 2 * trans } else { hidden };
            // uniform fan-in scaling, as PyTorch's default Kaiming-uniform for linear layers
            let bound = 1.0 / (cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid range");
            let weight = params.push(format!("{name}.W{}", l + 1), (0..rows * cols).map(|_| rng.sample(dist)));
            let bias = params.push(format!("{name}.b{}", l + 1), vec![0.0; rows]);
            dense.push(Dense {
                weight,
                bias,
                rows,
                cols,
            });
            cols = rows;
        }
        Self {
            active,
            split,
            swap,
            alpha,
            hidden,
            time_inputs,
            beta,
            sigma,
            dense,
            fourier,
            phase,
        }
    }

    /// Conditioning and transformed coordinate ranges.
    pub fn ranges(&self) -> (Range<usize>, Range<usize>) {
        if self.swap {
            (self.split..self.active, 0..self.split)
        } else {
            (0..self.split, self.split..self.active)
        }
    }

    /// `(s, t)` from the Fourier-feature network.
    pub fn net<S: Real, P: Lift<S>>(&self, theta: &[P], buf: &[f64], cond: &[S], time_in: &[S]) -> (Vec<S>, Vec<S>) {
        let h0: Vec<S> = cond.iter().chain(time_in).copied().collect();
        let n0 = h0.len();
        let scale = (-lift::<S, P>(theta, self.sigma)).exp();
        let half = self.hidden / 2;
        let pre: Vec<S> = (0..half)
            .map(|j| {
                let row = &buf[self.fourier + j * n0..self.fourier + (j + 1) * n0];
                (scale * S::affine_cst(0.0, row.iter().copied().zip(h0.iter().copied()))).offset(buf[self.phase + j])
            })
            .collect();
        let mut h: Vec<S> = Vec::with_capacity(self.hidden + n0);
        h.extend(pre.iter().map(|u| u.sin()));
        h.extend(pre.iter().map(|u| u.cos()));
        h.extend_from_slice(&h0);
        let n_dense = self.dense.len();
        for (l, d) in self.dense.iter().enumerate() {
            let last = l + 1 == n_dense;
            h = (0..d.rows)
                .map(|r| {
                    let w = &theta[d.weight + r * d.cols..d.weight + (r + 1) * d.cols];
                    let y = S::affine(lift(theta, d.bias + r), w.iter().map(|p| p.lift()).zip(h.iter().copied()));
                    if last {
                        y
                    } else {
                        y.silu()
                    }
                })
                .collect();
        }
        let t_out = h.split_off(h.len() / 2);
        (h, t_out)
    }

    pub fn forward<S: Real, P: Lift<S>>(
        &self,
        theta: &[P],
        buf: &[f64],
        x: &mut [S],
        frac: S,
        time_in: &[S],
    ) -> S {
        let (cond, trans) = self.ranges();
        let (s, t_out) = self.net(theta, buf, &x[cond], time_in);
        let mut logs = Vec::with_capacity(trans.len());
        for (k, xi) in trans.enumerate() {
            let eb = lift::<S, P>(theta, self.beta + k).exp();
            let (y, l) = coupling_update(x[xi], s[k].tanh(), t_out[k].tanh(), eb, self.alpha, frac);
            x[xi] = y;
            logs.push(l);
        }
        S::sum(logs.into_iter())
    }

    pub fn inverse<S: Real, P: Lift<S>>(&self, theta: &[P], buf: &[f64], y: &mut [S], frac: S, time_in: &[S]) {
        let (cond, trans) = self.ranges();
        let (s, t_out) = self.net(theta, buf, &y[cond], time_in);
        let start = trans.start;
        for xi in trans {
            let k = xi - start;
            let eb = lift::<S, P>(theta, self.beta + k).exp();
            y[xi] = coupling_restore(y[xi], s[k].tanh(), t_out[k].tanh(), eb, self.alpha, frac);
        }
    }
}

/// `x̃ = e^{g a} x + g b` with `g = tanh(e^ρ t)`, on the leading `active`
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleBiasLayer {
    pub active: usize,
    pub a: usize,
    pub b: usize,
    pub rho: usize,
}

impl ScaleBiasLayer {
    pub(crate) fn build(name: &str, active: usize, params: &mut ParameterStore) -> Self {
        Self {
            active,
            a: params.push(format!("{name}.a"), vec![0.0; active]),
            b: params.push(format!("{name}.b"), vec![0.0; active]),
            rho: params.push(format!("{name}.rho"), vec![0.0; active]),
        }
    }

    fn gates<S: Real, P: Lift<S>>(&self, theta: &[P], tau: S) -> Vec<S> {
        (0..self.active)
            .map(|i| (lift::<S, P>(theta, self.rho + i).exp() * tau).tanh())
            .collect()
    }

    pub fn forward<S: Real, P: Lift<S>>(&self, theta: &[P], x: &mut [S], tau: S) -> S {
        let g = self.gates(theta, tau);
        let mut ga = Vec::with_capacity(self.active);
        for i in 0..self.active {
            let e = g[i] * lift::<S, P>(theta, self.a + i);
            x[i] = e.exp() * x[i] + g[i] * lift::<S, P>(theta, self.b + i);
            ga.push(e);
        }
        S::sum(ga.into_iter())
    }

    pub fn inverse<S: Real, P: Lift<S>>(&self, theta: &[P], y: &mut [S], tau: S) {
        let g = self.gates(theta, tau);
        for i in 0..self.active {
            let shifted = y[i] - g[i] * lift::<S, P>(theta, self.b + i);
            y[i] = shifted * (-(g[i] * lift::<S, P>(theta, self.a + i))).exp();
        }
    }
}

/// Monotone piecewise-quadratic CDF on a uniform mesh of `[0, 1]`, held as
/// deviations from the identity so that equal weights give exactly `F(s) = s`.
#[derive(Clone, Debug)]
pub struct QuadraticCdf<S> {
    /// `ŵ_i - 1` at each of the `m̂ + 2` nodes.
    delta: Vec<S>,
    /// `c_w - 1`.
    norm_dev: S,
    h: f64,
}

impl<S: Real> QuadraticCdf<S> {
    /// From unnormalised node weights `ŵ_i > 0`.
    pub fn from_weights(w_hat: &[S]) -> Self {
        Self::from_deviations(w_hat.iter().map(|w| w.offset(-1.0)).collect())
    }

    pub fn from_deviations(delta: Vec<S>) -> Self {
        assert!(delta.len() >= 2, "mesh needs at least two nodes");
        let elems = delta.len() - 1;
        let h = 1.0 / elems as f64;
        let norm_dev = S::affine_cst(
            0.0,
            delta.iter().enumerate().map(|(i, &d)| {
                let c = if i == 0 || i == elems { 0.5 * h } else { h };
                (c, d)
            }),
        );
        Self { delta, norm_dev, h }
    }

    pub fn elements(&self) -> usize {
        self.delta.len() - 1
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.elements() {
            1.0
        } else {
            i as f64 * self.h
        }
    }

    /// Normalisation constant `c_w`.
    pub fn normaliser(&self) -> S {
        self.norm_dev.offset(1.0)
    }

    /// Normalised node weight `w_i`.
    pub fn weight(&self, i: usize) -> S {
        self.delta[i].offset(1.0) / self.normaliser()
    }

    /// `w_i - 1`.
    fn weight_dev(&self, i: usize) -> S {
        (self.delta[i] - self.norm_dev) / self.normaliser()
    }

    /// `C_i - s_i`, the cumulative mass deviation at node `i`.
    fn cum_dev(&self, i: usize) -> S {
        if i == 0 {
            return S::zero();
        }
        let h = self.h;
        let partial = S::affine_cst(
            0.0,
            self.delta[..=i].iter().enumerate().map(|(k, &d)| {
                let c = if k == 0 || k == i { 0.5 * h } else { h };
                (c, d)
            }),
        );
        (partial - self.norm_dev.scale(self.node(i))) / self.normaliser()
    }

    /// Half the slope change per unit length on element `i`.
    fn curvature(&self, i: usize) -> S {
        (self.delta[i + 1] - self.delta[i]) / self.normaliser().scale(2.0 * self.h)
    }

    fn element_of(&self, s: f64) -> usize {
        ((s / self.h).floor().max(0.0) as usize).min(self.elements() - 1)
    }

    /// `F(s) - s` and `F'(s) - 1` for `s ∈ [0, 1]`.
    pub fn deviation(&self, s: S) -> (S, S) {
        let i = self.element_of(s.value());
        let u = s.offset(-self.node(i));
        let a = self.curvature(i);
        let wd = self.weight_dev(i);
        let g = a * u * u + wd * u + self.cum_dev(i);
        let dg = (a * u).scale(2.0) + wd;
        (g, dg)
    }

    pub fn eval(&self, s: S) -> S {
        s + self.deviation(s).0
    }

    pub fn derivative(&self, s: S) -> S {
        self.deviation(s).1.offset(1.0)
    }

    /// Solves `F(s) = v` with the cancellation-free quadratic root.
    pub fn invert(&self, v: S) -> S {
        let target = v.value();
        let plain = QuadraticCdf::from_deviations(self.delta.iter().map(|d| d.value()).collect());
        let i = (1..self.elements()).take_while(|&k| plain.node(k) + plain.cum_dev(k) <= target).count();
        let a = self.curvature(i);
        let b = self.weight_dev(i).offset(1.0);
        let c = v - self.cum_dev(i).offset(self.node(i));
        let root = c.scale(2.0) / (b + (b * b + (a * c).scale(4.0)).sqrt());
        root.offset(self.node(i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    /// Interior mesh nodes `m̂`.
    pub mesh: usize,
    /// Half-width `a` of the region `[-a, a]` that is reshaped.
    pub bound: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self { mesh: 32, bound: 50.0 }
    }
}

/// Coordinate-wise monotone map, quadratic-CDF inside `[-a, a]` and the
/// identity outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearLayer {
    pub dim: usize,
    pub mesh: usize,
    pub bound: f64,
    pub psi: usize,
    pub rho: usize,
}

impl NonlinearLayer {
    pub(crate) fn build(name: &str, dim: usize, cfg: &NonlinearConfig, params: &mut ParameterStore) -> Self {
        let nodes = cfg.mesh + 2;
        Self {
            dim,
            mesh: cfg.mesh,
            bound: cfg.bound,
            psi: params.push(format!("{name}.psi"), vec![0.0; nodes]),
            rho: params.push(format!("{name}.rho"), vec![0.0; nodes]),
        }
    }

    pub fn cdf<S: Real, P: Lift<S>>(&self, theta: &[P], tau: S) -> QuadraticCdf<S> {
        let delta = (0..self.mesh + 2)
            .map(|i| {
                let g = (lift::<S, P>(theta, self.rho + i).exp() * tau).tanh();
                (g * lift::<S, P>(theta, self.psi + i)).exp().offset(-1.0)
            })
            .collect();
        QuadraticCdf::from_deviations(delta)
    }

    pub fn forward<S: Real, P: Lift<S>>(&self, theta: &[P], x: &mut [S], tau: S) -> S {
        let cdf = self.cdf(theta, tau);
        let a = self.bound;
        let mut logs = Vec::new();
        for xi in x.iter_mut() {
            if xi.value().abs() > a {
                continue;
            }
            let s = xi.offset(a).scale(0.5 / a);
            let (g, dg) = cdf.deviation(s);
            *xi = *xi + g.scale(2.0 * a);
            logs.push(dg.offset(1.0).ln());
        }
        S::sum(logs.into_iter())
    }

    pub fn inverse<S: Real, P: Lift<S>>(&self, theta: &[P], y: &mut [S], tau: S) {
        let cdf = self.cdf(theta, tau);
        let a = self.bound;
        for yi in y.iter_mut() {
            if yi.value().abs() > a {
                continue;
            }
            let v = yi.offset(a).scale(0.5 / a);
            let s = cdf.invert(v);
            *yi = s.scale(2.0 * a).offset(-a);
        }
    }
}

/// Checks layer parameter sizes against the store; used after loading.
pub(crate) fn check_offsets(end: usize, store: &ParameterStore, what: &str) -> Result<(), FlowError> {
    if end > store.len() {
        return Err(FlowError::Checkpoint(format!("{what} offset {end} beyond store of {}", store.len())));
    }
    Ok(())
}
