use rand::seq::SliceRandom;
use rand::Rng;

use crate::flow::{DensityModel, FlowError};

use super::TrainError;

/// Stamps `t_i = ⌈i/M⌉ · T/J` for `i = 1..=MJ`, so every stamp lies in `(0, T]`.
pub fn make_time_grid(t_final: f64, levels: usize, per_level: usize) -> Vec<f64> {
    let dt = t_final / levels as f64;
    (1..=levels * per_level)
        .map(|i| {
            let j = i.div_ceil(per_level);
            if j == levels {
                t_final
            } else {
                j as f64 * dt
            }
        })
        .collect()
}

/// Stamps on `[lo, hi]` with `steps + 1` levels including both ends, `per_level`
/// points per level.
pub fn interval_time_grid(lo: f64, hi: f64, steps: usize, per_level: usize) -> Vec<f64> {
    let dt = (hi - lo) / steps as f64;
    (0..=steps)
        .flat_map(|j| {
            let t = if j == steps { hi } else { lo + j as f64 * dt };
            std::iter::repeat_n(t, per_level)
        })
        .collect()
}

/// Space-time collocation points split into mini-batches.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// Adaptivity iteration the spatial points came from (0 = initial draw).
    pub iteration: usize,
    order: Vec<usize>,
    batches: usize,
}

impl CollocationSet {
    pub fn new<R: Rng + ?Sized>(
        points: Vec<Vec<f64>>,
        times: Vec<f64>,
        batches: usize,
        iteration: usize,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        if points.len() != times.len() {
            return Err(TrainError::Config(format!(
                "{} points for {} time stamps",
                points.len(),
                times.len()
            )));
        }
        if batches == 0 || batches > points.len() {
            return Err(TrainError::Config(format!(
                "cannot split {} points into {batches} batches",
                points.len()
            )));
        }
        let mut set = Self {
            order: (0..points.len()).collect(),
            points,
            times,
            iteration,
            batches,
        };
        set.shuffle(rng);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_batches(&self) -> usize {
        self.batches
    }

    pub fn shuffle<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.order.shuffle(rng);
    }

    /// Indices of batch `n`; batches are contiguous runs of the current
    /// permutation with sizes differing by at most one.
    pub fn batch_indices(&self, n: usize) -> &[usize] {
        let (q, r) = (self.len() / self.batches, self.len() % self.batches);
        let start = n * q + n.min(r);
        let len = q + usize::from(n < r);
        &self.order[start..start + len]
    }

    pub fn batch(&self, n: usize) -> (Vec<&[f64]>, Vec<f64>) {
        self.batch_indices(n)
            .iter()
            .map(|&i| (self.points[i].as_slice(), self.times[i]))
            .unzip()
    }
}

/// Uniform points in `bbox` paired with `times`.
pub fn init_collocation<R: Rng + ?Sized>(
    bbox: &[[f64; 2]],
    times: Vec<f64>,
    batches: usize,
    rng: &mut R,
) -> Result<CollocationSet, TrainError> {
    let points = times
        .iter()
        .map(|_| bbox.iter().map(|&[lo, hi]| rng.random_range(lo..hi)).collect())
        .collect();
    CollocationSet::new(points, times, batches, 0, rng)
}

/// Redraws each point from the model density at its own stamp: `z ~ p_0`, then
/// `x = T⁻¹(z, t)`.
pub fn resample_collocation<M: DensityModel, R: Rng + ?Sized>(
    model: &M,
    times: Vec<f64>,
    batches: usize,
    iteration: usize,
    rng: &mut R,
) -> Result<CollocationSet, TrainError> {
    let latents: Vec<Vec<f64>> = model.base().sample(rng, times.len());
    let points = latents
        .iter()
        .zip(&times)
        .map(|(z, &t)| model.latent_to_state(z, t))
        .collect::<Result<Vec<_>, FlowError>>()?;
    CollocationSet::new(points, times, batches, iteration, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, TkrNet};
    use crate::systems::GaussianDensity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_by_hand() {
        assert_eq!(make_time_grid(1.0, 2, 2), vec![0.5, 0.5, 1.0, 1.0]);
        let g = make_time_grid(5.0, 250, 1000);
        assert_eq!(g.len(), 250_000);
        assert_eq!(*g.last().unwrap(), 5.0);
        assert!((g[1000] - 0.04).abs() < 1e-15 && (g[999] - 0.02).abs() < 1e-15);
        assert!(g.iter().all(|&t| t > 0.0 && t <= 5.0));
    }

    #[test]
    fn interval_grid_has_both_ends() {
        let g = interval_time_grid(2.0, 4.0, 100, 1000);
        assert_eq!(g.len(), 101_000);
        assert_eq!(g[0], 2.0);
        assert_eq!(*g.last().unwrap(), 4.0);
    }

    #[test]
    fn batches_partition_the_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let times = make_time_grid(1.0, 7, 3);
        let mut set = init_collocation(&[[0.0, 2.0], [0.0, 1.0]], times, 4, &mut rng).unwrap();
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..4).flat_map(|n| set.batch_indices(n).to_vec()).collect();
            let sizes: Vec<usize> = (0..4).map(|n| set.batch_indices(n).len()).collect();
            assert_eq!(sizes, vec![6, 5, 5, 5]);
            seen.sort();
            assert_eq!(seen, (0..21).collect::<Vec<_>>());
            set.shuffle(&mut rng);
        }
    }

    #[test]
    fn uniform_points_stay_in_box_and_centre() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let set = init_collocation(&[[0.0, 2.0], [0.0, 1.0]], vec![1.0; n], 10, &mut rng).unwrap();
        assert!(set.points.iter().all(|p| (0.0..2.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])));
        let mean0 = set.points.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let se = (4.0f64 / 12.0 / n as f64).sqrt();
        assert!((mean0 - 1.0).abs() < 4.0 * se);
        let again = init_collocation(
            &[[0.0, 2.0], [0.0, 1.0]],
            vec![1.0; n],
            10,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn identity_model_resamples_the_prior() {
        let prior = GaussianDensity::isotropic(vec![1.0, 0.5], 0.05);
        let net = TkrNet::new(FlowConfig::new(2, 1.0), prior.clone()).unwrap();
        let times = vec![0.0; 8];
        let set = resample_collocation(&net, times, 2, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let direct = prior.sample(&mut ChaCha8Rng::seed_from_u64(2), 8);
        for (a, b) in set.points.iter().zip(&direct) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_batch_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_collocation(&[[0.0, 1.0]], vec![1.0; 3], 4, &mut rng).is_err());
        assert!(init_collocation(&[[0.0, 1.0]], vec![1.0; 3], 0, &mut rng).is_err());
    }
}
