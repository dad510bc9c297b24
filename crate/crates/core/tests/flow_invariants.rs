use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tkrnet::flow::{DensityModel, FlowConfig, TkrNet};
use tkrnet::systems::GaussianDensity;
use tkrnet::Tangent;

/// A network with every parameter perturbed away from its initial value, so
/// no layer is trivially the identity.
fn perturbed(dim: usize, blocks: usize, seed: u64) -> TkrNet {
    let cfg = FlowConfig {
        blocks,
        pairs_per_block: 2,
        hidden: 8,
        seed,
        ..FlowConfig::new(dim, 1.0)
    };
    let mut net = TkrNet::new(cfg, GaussianDensity::standard(dim)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let noise = Normal::new(0.0, 0.2).unwrap();
    for v in net.params.values.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    net
}

fn jacobian(net: &TkrNet, x: &[f64], t: f64) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let xs: Vec<Tangent<f64, 1>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| if i == j { Tangent::seeded(v, 0) } else { Tangent::constant(v) })
            .collect();
        let (z, _) = net.transform_with(&net.params.values, &xs, Tangent::constant(t)).unwrap();
        for i in 0..d {
            jac[i][j] = z[i].d[0];
        }
    }
    jac
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

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
}

#[test]
fn log_det_matches_dense_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (d, k) in [(1, 1), (2, 1), (3, 2), (5, 3), (7, 3)] {
        let net = perturbed(d, k, d as u64);
        for _ in 0..10 {
            let x = random_point(&mut rng, d);
            let t = rng.random_range(0.05..1.0);
            let (_, ld) = net.transform(&x, t).unwrap();
            let dense = log_abs_det(jacobian(&net, &x, t));
            assert!((ld - dense).abs() < 1e-5, "d={d}: {ld} vs {dense}");
        }
    }
}

#[test]
fn inverse_recovers_inputs() {
    for (d, k) in [(2, 1), (3, 2), (7, 3), (40, 5)] {
        let net = perturbed(d, k, 100 + d as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let mut worst = 0.0f64;
        for _ in 0..1024 {
            let x = random_point(&mut rng, d);
            let t = rng.random_range(0.0..=1.0);
            let (z, _) = net.transform(&x, t).unwrap();
            let back = net.inverse(&z, t).unwrap();
            for (a, b) in x.iter().zip(&back) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-8, "d={d}: {worst}");
    }
}

#[test]
fn identity_at_window_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in [1, 4, 40] {
        let net = perturbed(d, d.min(3), 7);
        let x = random_point(&mut rng, d);
        let (z, ld) = net.transform(&x, 0.0).unwrap();
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(ld.abs() <= 1e-12);
    }
}

#[test]
fn density_integrates_to_one_in_two_dimensions() {
    let net = perturbed(2, 1, 21);
    let (n, lo, hi) = (801, -20.0, 20.0);
    let h = (hi - lo) / (n - 1) as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [lo + h * i as f64, lo + h * j as f64];
            let w = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            total += w(i) * w(j) * net.log_density(&x, 0.8).unwrap().exp();
        }
    }
    assert!((total * h * h - 1.0).abs() < 1e-3, "{}", total * h * h);
}

#[test]
fn single_precision_matches_double() {
    let net = perturbed(3, 2, 4);
    let x = [0.3, -0.7, 1.1];
    let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let theta: Vec<f64> = net.params.values.clone();
    let (z, ld) = net.transform_with(&theta, &x, 0.6).unwrap();
    let (z32, ld32) = net.transform_with(&theta, &x32, 0.6f32).unwrap();
    for (a, b) in z.iter().zip(&z32) {
        assert!((a - *b as f64).abs() < 1e-4);
    }
    assert!((ld - ld32 as f64).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roundtrip_anywhere(seed in 0u64..1000, t in 0.0f64..=1.0, x in prop::collection::vec(-4.0f64..4.0, 3)) {
        let net = perturbed(3, 2, seed);
        let (z, _) = net.transform(&x, t).unwrap();
        let back = net.inverse(&z, t).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn log_det_consistent_with_inverse(seed in 0u64..1000, t in 0.01f64..=1.0, x in prop::collection::vec(-3.0f64..3.0, 2)) {
        // log p(x) - log p0(T(x)) is the log-determinant of T
        let net = perturbed(2, 1, seed);
        let (z, ld) = net.transform(&x, t).unwrap();
        let lp = net.log_density(&x, t).unwrap();
        let base = net.base().log_pdf(&z);
        prop_assert!((lp - base - ld).abs() < 1e-10);
    }
}
