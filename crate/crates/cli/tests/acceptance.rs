//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p tkrnet-cli --test acceptance`. The desk-scale
//! training criteria take several minutes on one core.

use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use tkrnet::diffcore::{Lift, ParameterStore};
use tkrnet::flow::{DensityModel, FlowConfig, FlowError, StackedModel, TkrNet, Trainable};
use tkrnet::loss::{self, DensityView, LossVariant};
use tkrnet::odeint::{integrate, integrate_with_logdensity, IntegratorConfig};
use tkrnet::systems::{self, GaussianDensity, LinearDecay, SystemSpec, VectorField};
use tkrnet::train::{
    equal_breaks, rng_for, train_adaptive, train_temporal_choice1, train_temporal_choice2, AdamW, AdamWConfig,
    Architecture, CosineSchedule, Silent, Stream, TrainConfig,
};
use tkrnet::{Real, Tangent};
use tkrnet_cli::config::preset;
use tkrnet_cli::run::{self, RunSummary};

type Outcome = Result<String, String>;

fn rng(index: u64) -> impl Rng {
    rng_for(0xacce, Stream::Evaluation, index)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Benchmark architectures with every parameter moved off its initial value.
fn benchmark_nets() -> Result<Vec<(String, SystemSpec, TkrNet)>, String> {
    let mut out = Vec::new();
    for name in ["double_gyre_paper", "kraichnan_orszag_paper", "duffing_paper", "lorenz96_paper"] {
        let resolved = preset(name).and_then(|c| c.resolve()).map_err(fail)?;
        let sys = resolved.system;
        let flow = resolved.train.arch.flow_config(sys.dim(), 0.0, sys.t_final, 17);
        let mut net = TkrNet::new(flow, sys.initial.clone()).map_err(fail)?;
        perturb(&mut net.params, 0.1, out.len() as u64);
        out.push((name.to_string(), sys, net));
    }
    Ok(out)
}

fn perturb(params: &mut ParameterStore, scale: f64, seed: u64) {
    let mut r = rng(1000 + seed);
    for v in params.values.iter_mut() {
        *v += scale * r.random_range(-1.0..1.0);
    }
}

fn in_box<R: Rng>(sys: &SystemSpec, r: &mut R) -> Vec<f64> {
    sys.init_box.iter().map(|&[lo, hi]| r.random_range(lo..hi)).collect()
}

fn invertibility() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut dims = Vec::new();
    for (_, sys, net) in benchmark_nets()? {
        let mut r = rng(1);
        for _ in 0..1024 {
            let x = in_box(&sys, &mut r);
            let t = r.random_range(0.0..=sys.t_final);
            let (z, _) = net.transform(&x, t).map_err(fail)?;
            let back = net.inverse(&z, t).map_err(fail)?;
            for (a, b) in x.iter().zip(&back) {
                worst = worst.max((a - b).abs());
            }
        }
        dims.push(sys.dim());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-8 && secs < 60.0,
        format!("d = {dims:?}, max |x - T^-1(T(x))| = {worst:.2e} (<= 1e-8), {secs:.1}s (< 60s)"),
    )
}

fn max_identity_error<M: DensityModel>(model: &M, sys: &SystemSpec, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..1024 {
        let x = in_box(sys, &mut r);
        let lm = model.log_density(&x, 0.0).map_err(fail)?;
        worst = worst.max(((lm - sys.log_p0(&x)).exp() - 1.0).abs());
    }
    Ok(worst)
}

fn identity_at_start() -> Outcome {
    let mut worst = 0.0f64;
    for (_, sys, net) in benchmark_nets()? {
        let fresh = TkrNet::new(net.config.clone(), sys.initial.clone()).map_err(fail)?;
        worst = worst.max(max_identity_error(&fresh, &sys, 2)?);
        worst = worst.max(max_identity_error(&net, &sys, 3)?);
    }
    let resolved = preset("double_gyre_smoke").and_then(|c| c.resolve()).map_err(fail)?;
    let trained = train_adaptive(&resolved.system, &resolved.train, &mut Silent).map_err(fail)?;
    let trained_err = max_identity_error(&trained.model, &resolved.system, 4)?;
    worst = worst.max(trained_err);
    check(
        worst <= 1e-12,
        format!("max |p(x,0) - p0(x)| / p0(x) = {worst:.2e} over fresh, perturbed and trained models (<= 1e-12)"),
    )
}

/// `log|det A|` by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

fn fd_jacobian(net: &TkrNet, x: &[f64], t: f64, h: f64) -> Result<Vec<Vec<f64>>, FlowError> {
    let d = x.len();
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (zu, _) = net.transform(&up, t)?;
        let (zd, _) = net.transform(&dn, t)?;
        for i in 0..d {
            jac[i][j] = (zu[i] - zd[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn log_det_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (_, sys, net) in benchmark_nets()?.into_iter().filter(|(_, s, _)| s.dim() <= 7) {
        let mut r = rng(5);
        for _ in 0..100 {
            let x = in_box(&sys, &mut r);
            let t = r.random_range(0.0..=sys.t_final);
            let (_, ld) = net.transform(&x, t).map_err(fail)?;
            let dense = log_abs_det(fd_jacobian(&net, &x, t, 1e-5).map_err(fail)?);
            // relative error of |det|
            worst = worst.max((ld - dense).exp_m1().abs());
            count += 1;
        }
    }
    check(
        worst < 1e-5,
        format!("{count} points, max relative error of |det| vs finite-difference Jacobian = {worst:.2e} (< 1e-5)"),
    )
}

fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale
}

fn one_dim_net(seed: u64) -> TkrNet {
    let cfg = FlowConfig {
        pairs_per_block: 2,
        hidden: 8,
        hidden_layers: 1,
        seed,
        ..FlowConfig::new(1, 1.0)
    };
    let mut net = TkrNet::new(cfg, GaussianDensity::standard(1)).expect("valid toy flow");
    perturb(&mut net.params, 0.2, seed);
    net
}

fn derivative_exactness() -> Outcome {
    let h = 1e-5;
    let mut worst_in = 0.0f64;
    for (_, sys, net) in benchmark_nets()?.into_iter().take(2) {
        let view = DensityView::new(&net);
        let mut r = rng(6);
        for _ in 0..20 {
            let x = sys.sample_p0(&mut r, 1).remove(0);
            let t = r.random_range(0.1..sys.t_final);
            let (_, dt, gx) = view.channels(&x, t).map_err(fail)?;
            let lp = |x: &[f64], t: f64| net.log_density(x, t).map_err(fail);
            let mut fd = vec![(lp(&x, t + h)? - lp(&x, t - h)?) / (2.0 * h)];
            for j in 0..x.len() {
                let (mut up, mut dn) = (x.clone(), x.clone());
                up[j] += h;
                dn[j] -= h;
                fd.push((lp(&up, t)? - lp(&dn, t)?) / (2.0 * h));
            }
            let mut exact = vec![dt];
            exact.extend(gx);
            worst_in = worst_in.max(norm_rel(&exact, &fd));
        }
    }

    let mut net = one_dim_net(3);
    let field = LinearDecay { dim: 1, rate: 0.8 };
    let pts: Vec<Vec<f64>> = (0..16).map(|i| vec![-1.5 + 0.2 * i as f64]).collect();
    let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
    let times: Vec<f64> = (0..16).map(|i| 0.05 + 0.06 * i as f64).collect();
    let mut worst_param = 0.0f64;
    for variant in [LossVariant::Log, LossVariant::Plain] {
        let (_, grad) = loss::batch_loss(&net, &field, &refs, &times, variant).map_err(fail)?;
        let mut fd = Vec::with_capacity(grad.len());
        for k in 0..grad.len() {
            let base = net.params.values[k];
            let hp = 1e-6 * base.abs().max(1.0);
            net.params.values[k] = base + hp;
            let up = loss::batch_loss(&net, &field, &refs, &times, variant).map_err(fail)?.0;
            net.params.values[k] = base - hp;
            let dn = loss::batch_loss(&net, &field, &refs, &times, variant).map_err(fail)?.0;
            net.params.values[k] = base;
            fd.push((up - dn) / (2.0 * hp));
        }
        worst_param = worst_param.max(norm_rel(&grad, &fd));
    }
    check(
        worst_in < 1e-6 && worst_param < 1e-4,
        format!("(d_t, grad_x) log p rel. err = {worst_in:.2e} (< 1e-6); loss parameter gradient rel. err = {worst_param:.2e} (< 1e-4)"),
    )
}

/// `N(θ0 t, e^{2 θ1 t})` on the real line. With `θ = (0, -rate)` this is the
/// exact transport of `N(0, 1)` under `x' = -rate x`.
struct GaussianPath {
    params: ParameterStore,
    base: GaussianDensity,
}

impl GaussianPath {
    fn new(theta: [f64; 2]) -> Self {
        let mut params = ParameterStore::new();
        params.push("theta", theta);
        Self {
            params,
            base: GaussianDensity::standard(1),
        }
    }
}

impl DensityModel for GaussianPath {
    fn dim(&self) -> usize {
        1
    }

    fn base(&self) -> &GaussianDensity {
        &self.base
    }

    fn latent_to_state(&self, z: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        let th = &self.params.values;
        Ok(vec![z[0] * (th[1] * t).exp() + th[0] * t])
    }

    fn log_density_at<S: Real>(&self, x: &[S], t: S) -> Result<S, FlowError> {
        self.log_density_with(&self.params.values, x, t)
    }
}

impl Trainable for GaussianPath {
    fn params(&self) -> &ParameterStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn log_density_with<S: Real, P: Lift<S>>(&self, theta: &[P], x: &[S], t: S) -> Result<S, FlowError> {
        let (m, s): (S, S) = (theta[0].lift(), theta[1].lift());
        let ls = s * t;
        let u = (x[0] - m * t) * (-ls).exp();
        Ok((u * u).scale(-0.5) - ls.offset(0.5 * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// `∂_t p + ∂_x p · f + p ∇·f` from forward derivatives of `p` itself.
fn direct_residual<M: DensityModel, F: VectorField>(model: &M, field: &F, x: &[f64], t: f64) -> Result<f64, FlowError> {
    let xs = [Tangent::<f64, 2>::seeded(x[0], 0)];
    let p = model.log_density_at(&xs, Tangent::seeded(t, 1))?.exp();
    let f = field.field(x, t)[0];
    Ok(p.d[1] + p.d[0] * f + p.v * field.divergence(x, t))
}

fn analytic_zero_residual() -> Outcome {
    let field = LinearDecay { dim: 1, rate: 1.0 };
    let exact = GaussianPath::new([0.0, -1.0]);
    let mut r = rng(7);
    let (mut max_rlog, mut max_r) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let x = [r.random_range(-3.0..3.0)];
        let t = r.random_range(0.0..=1.0);
        max_rlog = max_rlog.max(loss::residual_log(&exact, &field, &x, t).map_err(fail)?.abs());
        max_r = max_r.max(loss::residual(&exact, &field, &x, t).map_err(fail)?.abs());
    }

    let off = GaussianPath::new([0.4, 0.3]);
    let net = one_dim_net(9);
    let mut worst_id = 0.0f64;
    for _ in 0..1000 {
        let x = [r.random_range(-3.0..3.0)];
        let t = r.random_range(0.0..=1.0);
        for model in [&off as &dyn ResidualPair, &net] {
            let (res, direct) = model.pair(&field, &x, t)?;
            worst_id = worst_id.max((res - direct).abs() / res.abs());
        }
    }
    check(
        max_rlog <= 1e-8 && max_r <= 1e-8 && worst_id <= 1e-10,
        format!("max |r_log| = {max_rlog:.2e}, max |r| = {max_r:.2e} (<= 1e-8); r = p r_log rel. err = {worst_id:.2e} (<= 1e-10)"),
    )
}

trait ResidualPair {
    fn pair(&self, field: &LinearDecay, x: &[f64], t: f64) -> Result<(f64, f64), String>;
}

impl<M: DensityModel> ResidualPair for M {
    fn pair(&self, field: &LinearDecay, x: &[f64], t: f64) -> Result<(f64, f64), String> {
        let res = loss::residual(self, field, x, t).map_err(fail)?;
        Ok((res, direct_residual(self, field, x, t).map_err(fail)?))
    }
}

fn ode_integrator() -> Outcome {
    let cfg = IntegratorConfig {
        rtol: 1e-8,
        ..Default::default()
    };
    let decay = LinearDecay { dim: 1, rate: 1.0 };
    let x = integrate(&decay, &[1.0], &[1.0], &cfg).map_err(fail)?;
    let decay_err = (x[0][0] - (-1.0f64).exp()).abs();

    let mut worst = 0.0f64;
    for d in [10, 40] {
        let sys = systems::lorenz96(d, 1.0).map_err(fail)?;
        let mut r = rng(8);
        let times = [0.25, 0.5, 1.0];
        for x0 in sys.sample_p0(&mut r, 8) {
            let lp0 = sys.log_p0(&x0);
            let (_, lp) = integrate_with_logdensity(&sys, &x0, lp0, &times, &cfg, 0).map_err(fail)?;
            for (t, l) in times.iter().zip(lp) {
                worst = worst.max((l - (lp0 + d as f64 * t)).abs());
            }
        }
    }
    check(
        decay_err <= 1e-8 && worst <= 1e-7,
        format!("linear decay terminal error = {decay_err:.2e} (<= 1e-8); Lorenz-96 log-density error = {worst:.2e} (<= 1e-7)"),
    )
}

struct DeskRun {
    summary: RunSummary,
    bound_rows: usize,
    elapsed: Duration,
}

fn desk_double_gyre(dir: &Path) -> Result<DeskRun, String> {
    let cfg = preset("double_gyre_desk").map_err(fail)?;
    let start = Instant::now();
    let summary = run::train(&cfg, dir).map_err(|e| format!("{e:#}"))?;
    let elapsed = start.elapsed();
    let bound = std::fs::read_to_string(dir.join(run::BOUND_FILE)).map_err(fail)?;
    Ok(DeskRun {
        summary,
        bound_rows: bound.lines().count().saturating_sub(1),
        elapsed,
    })
}

fn kl_trend(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(Clone::clone)?;
    let its = &desk.summary.iterations;
    let (first, last) = match (its.first(), its.last()) {
        (Some(a), Some(b)) if its.len() == 3 => (a.mean_kl, b.mean_kl),
        _ => return Err(format!("expected 3 adaptivity iterations, got {}", its.len())),
    };
    let secs = desk.elapsed.as_secs_f64();
    check(
        last < first && last < 0.1 && secs <= 1800.0,
        format!("mean KL {first:.4} -> {last:.4} (decreasing, final < 0.1), {secs:.0}s (<= 1800s)"),
    )
}

fn kl_bound(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(Clone::clone)?;
    check(
        desk.bound_rows > 0 && desk.summary.bound_flags == 0,
        format!(
            "{} of {} checked times exceed E|r_log| by more than 3 combined SE",
            desk.summary.bound_flags, desk.bound_rows
        ),
    )
}

fn toy_config(seed: u64, t_final: f64) -> TrainConfig {
    TrainConfig {
        arch: Architecture {
            blocks: 1,
            pairs_per_block: 2,
            hidden: 8,
            hidden_layers: 1,
            alpha: 0.6,
            nonlinear: None,
        },
        epochs: 2,
        adaptive_iters: 1,
        batches: 2,
        lr: 1e-2,
        lr_min: 0.0,
        adamw: AdamWConfig::default(),
        seed,
        loss: LossVariant::Log,
        time_steps: 4,
        points_per_step: 8,
        t_final,
        sub_intervals: 1,
        interface_weight: 1.0,
    }
}

/// Independent composition: local model at `t`, earlier models at their right
/// endpoints, then the base log-density plus every log-determinant.
fn composed_log_density(s: &StackedModel, x: &[f64], t: f64) -> Result<f64, FlowError> {
    let i = s.breaks.windows(2).position(|w| t <= w[1]).expect("t inside the stack");
    let (mut y, mut acc) = s.nets[i].transform(x, t)?;
    for j in (0..i).rev() {
        let (z, ld) = s.nets[j].transform(&y, s.breaks[j + 1])?;
        y = z;
        acc += ld;
    }
    Ok(acc + s.base.log_pdf(&y))
}

fn temporal_decomposition() -> Outcome {
    let sys = systems::linear_decay(2, 0.7);
    let breaks = equal_breaks(1.5, 3);
    let trained = train_temporal_choice2(&sys, &breaks, &toy_config(9, 1.5), &mut Silent).map_err(fail)?;
    let mut stack = trained.model;
    let mut r = rng(10);
    let mut worst_cont = 0.0f64;
    let mut worst_comp = 0.0f64;
    for pass in 0..2 {
        if pass == 1 {
            for (k, net) in stack.nets.iter_mut().enumerate() {
                perturb(&mut net.params, 0.2, 20 + k as u64);
            }
        }
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| r.random_range(-2.5..2.5)).collect();
            for i in 1..3 {
                let tb = stack.breaks[i];
                let left = stack.log_density(&x, tb).map_err(fail)?;
                let right = stack
                    .log_density_in(i, &stack.nets[i].params.values, &x, tb)
                    .map_err(fail)?;
                worst_cont = worst_cont.max(((right - left).exp() - 1.0).abs());
            }
            let t = r.random_range(0.0..=1.5);
            let direct = composed_log_density(&stack, &x, t).map_err(fail)?;
            worst_comp = worst_comp.max((stack.log_density(&x, t).map_err(fail)? - direct).abs());
        }
    }

    let decay = systems::linear_decay(1, 1.0);
    let cfg = TrainConfig {
        epochs: 25,
        ..toy_config(11, 2.0)
    };
    let out = train_temporal_choice1(&decay, &equal_breaks(2.0, 2), &cfg, &mut Silent).map_err(fail)?;
    let ce: Vec<f64> = out
        .steps
        .iter()
        .filter(|s| s.interval == 1)
        .filter_map(|s| s.interface)
        .take(50)
        .collect();
    if ce.len() < 50 {
        return Err(format!("only {} interface steps recorded", ce.len()));
    }
    let head = ce[..5].iter().sum::<f64>() / 5.0;
    let tail = ce[45..].iter().sum::<f64>() / 5.0;
    check(
        worst_cont <= 1e-12 && worst_comp <= 1e-10 && tail < head,
        format!(
            "continuity rel. err = {worst_cont:.2e} (<= 1e-12); composition err = {worst_comp:.2e} (<= 1e-10); interface CE {head:.4} -> {tail:.4}"
        ),
    )
}

/// Adam with decoupled decay written the way the reference framework
/// computes it: the step size absorbs the first bias correction and the
/// denominator the second.
fn scripted_adamw(theta: &mut [f64], m: &mut [f64], v: &mut [f64], step: i32, grad: &[f64], lr: f64, cfg: &AdamWConfig) {
    let bias1 = 1.0 - cfg.beta1.powi(step);
    let bias2 = 1.0 - cfg.beta2.powi(step);
    for i in 0..theta.len() {
        theta[i] *= 1.0 - lr * cfg.weight_decay;
        m[i] += (grad[i] - m[i]) * (1.0 - cfg.beta1);
        v[i] = v[i] * cfg.beta2 + grad[i] * grad[i] * (1.0 - cfg.beta2);
        let denom = v[i].sqrt() / bias2.sqrt() + cfg.eps;
        theta[i] -= lr / bias1 * m[i] / denom;
    }
}

fn optimizer_and_schedule() -> Outcome {
    let cfg = AdamWConfig {
        weight_decay: 0.05,
        ..Default::default()
    };
    let start = vec![0.5, -1.2, 3.0, 0.0];
    let grads = [vec![0.3, -2.0, 0.01, 0.0], vec![-0.1, 1.5, 0.02, 4.0]];
    let lrs = [1e-2, 5e-3];
    let mut opt = AdamW::new(start.len(), cfg);
    let mut theta = start.clone();
    let mut oracle = start;
    let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
    let mut worst = 0.0f64;
    for (k, (g, &lr)) in grads.iter().zip(&lrs).enumerate() {
        opt.step(&mut theta, g, lr);
        scripted_adamw(&mut oracle, &mut m, &mut v, k as i32 + 1, g, lr, &cfg);
        for (a, b) in theta.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let s = CosineSchedule {
        lr_max: 1e-3,
        lr_min: 1e-5,
        total_steps: 1000,
    };
    let endpoints = s.lr(0) == 1e-3 && s.lr(1000) == 1e-5;
    check(
        worst <= 1e-12 && endpoints,
        format!("two-step trace max deviation = {worst:.2e} (<= 1e-12); cosine endpoints exact: {endpoints}"),
    )
}

fn lorenz96_desk(dir: &Path) -> Outcome {
    let cfg = preset("lorenz96_desk").map_err(fail)?;
    let summary = run::train(&cfg, dir).map_err(|e| format!("{e:#}"))?;
    check(
        summary.final_loss.is_finite() && summary.max_mean_error < 5e-2,
        format!(
            "final loss {:.4e} (finite); max per-dimension mean error {:.3e} (< 5e-2); max variance error {:.3e}",
            summary.final_loss, summary.max_mean_error, summary.max_var_error
        ),
    )
}

fn determinism(root: &Path) -> Outcome {
    let cfg = preset("double_gyre_smoke").map_err(fail)?;
    let (a, b) = (root.join("a"), root.join("b"));
    run::train(&cfg, &a).map_err(|e| format!("{e:#}"))?;
    // a different worker count must not change the result
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(fail)?;
    pool.install(|| run::train(&cfg, &b)).map_err(|e| format!("{e:#}"))?;
    let read = |d: &Path| std::fs::read(d.join(run::METRICS_FILE)).map_err(fail);
    let (ma, mb) = (read(&a)?, read(&b)?);
    check(
        !ma.is_empty() && ma == mb,
        format!("metrics.csv: {} bytes, identical across runs: {}", ma.len(), ma == mb),
    )
}

/// Arguments select criteria by substring of their name; none runs all.
fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let desk_run = OnceLock::new();
    let desk = || desk_run.get_or_init(|| desk_double_gyre(&tmp.path().join("desk")));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("invertibility", Box::new(invertibility)),
        ("identity at t = 0", Box::new(identity_at_start)),
        ("log-determinant", Box::new(log_det_exactness)),
        ("derivatives", Box::new(derivative_exactness)),
        ("zero residual of exact transport", Box::new(analytic_zero_residual)),
        ("ODE integrator", Box::new(ode_integrator)),
        ("desk double gyre KL", Box::new(|| kl_trend(desk()))),
        ("KL derivative bound", Box::new(|| kl_bound(desk()))),
        ("temporal decomposition", Box::new(temporal_decomposition)),
        ("optimizer and schedule", Box::new(optimizer_and_schedule)),
        ("Lorenz-96 desk", Box::new(|| lorenz96_desk(&tmp.path().join("l96")))),
        ("determinism", Box::new(|| determinism(&tmp.path().join("det")))),
    ];
    let mut failures = 0;
    let mut run = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        run += 1;
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {run} criteria passed", run - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
