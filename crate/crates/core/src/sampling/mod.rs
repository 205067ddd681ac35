//! Where to measure next.
//!
//! The adaptive samplers turn an ensemble's per-pixel disagreement into a
//! [`VarianceMap`] and then either draw from the proportional distribution
//! (probability matching) or take the top of the map (MAX). Random and grid
//! sampling are the passive baselines.

mod driver;
mod persist;
mod provider;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::{Dims, Pixel, Scene};

pub use driver::{
    draw_phase, run_phased_testing, run_phased_training, train_pipeline, PhaseRecord, PhaseScore, TestOutcome,
    TrainedPipeline, TrainingPhaseLog,
};
pub use persist::{load_pipeline, save_pipeline, ForestPipeline};
pub use provider::{DepthCompleter, EnsembleProvider, EnsembleTrainer, ForestEnsemble, ForestTrainer};

/// Non-negative scores over the pixels that may still be measured.
/// Pixels outside `support` are excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    dims: Dims,
    support: Vec<Pixel>,
    values: Vec<f64>,
}

impl VarianceMap {
    pub fn new(dims: Dims, support: Vec<Pixel>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} support pixels but {} values",
                support.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data(format!("variance {v} is not a finite non-negative value")));
        }
        if let Some(p) = support.iter().find(|p| !dims.contains(**p)) {
            return Err(Error::Dimension(format!("support pixel {p} outside {dims}")));
        }
        Ok(VarianceMap { dims, support, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn support(&self) -> &[Pixel] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Row-major dense view; excluded pixels are `None`.
    pub fn to_dense(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.dims.len()];
        for (p, v) in self.support.iter().zip(&self.values) {
            out[self.dims.index(*p)] = Some(*v);
        }
        out
    }
}

/// Sampling distribution over the same support as its variance map.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    support: Vec<Pixel>,
    probs: Vec<f64>,
}

impl ProbabilityMap {
    pub fn support(&self) -> &[Pixel] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// π(x) = v(x) / Σv, or uniform over the support when every variance is zero.
pub fn variance_to_probability(v: &VarianceMap) -> Result<ProbabilityMap> {
    if v.is_empty() {
        return Err(Error::NoCandidates);
    }
    let total: f64 = v.values.iter().sum();
    let probs = if total > 0.0 {
        v.values.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    };
    Ok(ProbabilityMap {
        support: v.support.clone(),
        probs,
    })
}

/// Pixels chosen by a sampler. `exhausted` is set when fewer pixels were
/// available than requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    pub pixels: Vec<Pixel>,
    pub exhausted: bool,
}

/// Binary sum tree over weights; internal sums are recomputed from their
/// children on every update so removals do not accumulate drift.
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(weights: &[f64]) -> Self {
        let leaves = weights.len().next_power_of_two();
        let mut nodes = vec![0.0; 2 * leaves];
        nodes[leaves..leaves + weights.len()].copy_from_slice(weights);
        for i in (1..leaves).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        SumTree { leaves, nodes }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn weight(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    fn set(&mut self, i: usize, w: f64) {
        let mut n = self.leaves + i;
        self.nodes[n] = w;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative range contains `u`, for `0 <= u < total`.
    fn find(&self, mut u: f64) -> usize {
        let mut n = 1;
        while n < self.leaves {
            let left = self.nodes[2 * n];
            if u < left {
                n *= 2;
            } else {
                u -= left;
                n = 2 * n + 1;
            }
        }
        n - self.leaves
    }
}

/// Sequential weighted draws without replacement: draw one pixel from π,
/// remove it, renormalize over the rest and repeat. When the remaining mass
/// is zero the remaining pixels are drawn uniformly.
pub fn sample_without_replacement<R: Rng + ?Sized>(pi: &ProbabilityMap, count: usize, rng: &mut R) -> Draw {
    let n = pi.len();
    let take = count.min(n);
    let mut tree = SumTree::new(&pi.probs);
    let mut alive: Vec<bool> = vec![true; n];
    let mut remaining = n;
    let mut pixels = Vec::with_capacity(take);
    for _ in 0..take {
        let total = tree.total();
        let chosen = if total > 0.0 {
            let mut i = tree.find(rng.random::<f64>() * total);
            if i >= n || tree.weight(i) <= 0.0 {
                // u fell on the upper edge through rounding; take the last positive leaf
                i = (0..n).rev().find(|&j| tree.weight(j) > 0.0).expect("positive total");
            }
            i
        } else {
            let k = rng.random_range(0..remaining);
            (0..n).filter(|&j| alive[j]).nth(k).expect("k < remaining")
        };
        alive[chosen] = false;
        remaining -= 1;
        tree.set(chosen, 0.0);
        pixels.push(pi.support[chosen]);
    }
    Draw {
        pixels,
        exhausted: count > n,
    }
}

/// The `count` highest-variance pixels, ties broken by row-major position.
pub fn max_sampler(v: &VarianceMap, count: usize) -> Draw {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| {
        v.values[b]
            .total_cmp(&v.values[a])
            .then_with(|| v.support[a].cmp(&v.support[b]))
    });
    Draw {
        pixels: order.into_iter().take(count).map(|i| v.support[i]).collect(),
        exhausted: count > v.len(),
    }
}

/// `budget` distinct unmeasured valid pixels drawn uniformly.
pub fn random_sampler<R: Rng + ?Sized>(scene: &Scene, budget: usize, rng: &mut R) -> Draw {
    let support = scene.sampling_support();
    let take = budget.min(support.len());
    Draw {
        pixels: index::sample(rng, support.len(), take)
            .into_iter()
            .map(|i| support[i])
            .collect(),
        exhausted: budget > support.len(),
    }
}

/// Seed for the top-up draws of the grid sampler, which takes no RNG.
const GRID_FILL_SEED: u64 = 0x6772_6964;

/// Approximate regular grid on semi-dense ground truth.
///
/// A lattice of ⌈√(B·w/h)⌉ × ⌈√(B·h/w)⌉ points is laid over the image and each
/// point snaps to the nearest (L1, then row-major) unmeasured valid pixel not
/// already taken. Surplus points with the largest snap displacement are
/// dropped; a shortfall is filled with uniform random valid pixels.
pub fn grid_sampler(scene: &Scene, budget: usize) -> Draw {
    let dims = scene.dims();
    let candidate = |p: Pixel| scene.ground_truth.is_valid(p) && !scene.samples.is_measured(p);
    let available = dims.pixels().filter(|&p| candidate(p)).count();
    if budget == 0 || available == 0 {
        return Draw {
            pixels: Vec::new(),
            exhausted: budget > available,
        };
    }
    let (w, h) = (dims.width as f64, dims.height as f64);
    let b = budget as f64;
    let nx = (b * w / h).sqrt().ceil() as usize;
    let ny = (b * h / w).sqrt().ceil() as usize;

    let mut taken = vec![false; dims.len()];
    // (displacement, lattice order, pixel)
    let mut snapped: Vec<(usize, usize, Pixel)> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let ideal = Pixel::new(
                (((j as f64 + 0.5) * h / ny as f64) as usize).min(dims.height - 1),
                (((i as f64 + 0.5) * w / nx as f64) as usize).min(dims.width - 1),
            );
            if let Some(p) = nearest_free(dims, ideal, |p| candidate(p) && !taken[dims.index(p)]) {
                taken[dims.index(p)] = true;
                snapped.push((ideal.l1(p), j * nx + i, p));
            }
        }
    }
    if snapped.len() > budget {
        snapped.sort_by_key(|&(d, order, _)| (d, order));
        snapped.truncate(budget);
        snapped.sort_by_key(|&(_, order, _)| order);
    }
    let mut pixels: Vec<Pixel> = snapped.into_iter().map(|(_, _, p)| p).collect();
    if pixels.len() < budget {
        let rest: Vec<Pixel> = dims.pixels().filter(|&p| candidate(p) && !taken[dims.index(p)]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(GRID_FILL_SEED);
        let extra = (budget - pixels.len()).min(rest.len());
        pixels.extend(index::sample(&mut rng, rest.len(), extra).into_iter().map(|i| rest[i]));
    }
    Draw {
        exhausted: budget > pixels.len(),
        pixels,
    }
}

/// Closest pixel to `from` (L1, ties row-major) accepted by `ok`.
fn nearest_free(dims: Dims, from: Pixel, ok: impl Fn(Pixel) -> bool) -> Option<Pixel> {
    let (r, c) = (from.row as isize, from.col as isize);
    let (h, w) = (dims.height as isize, dims.width as isize);
    for d in 0..(h + w) {
        for dr in -d..=d {
            let row = r + dr;
            if row < 0 || row >= h {
                continue;
            }
            let rem = d - dr.abs();
            for col in [c - rem, c + rem] {
                if col >= 0 && col < w {
                    let p = Pixel::new(row as usize, col as usize);
                    if ok(p) {
                        return Some(p);
                    }
                }
                if rem == 0 {
                    break;
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DepthMap;

    fn vmap(values: &[f64]) -> VarianceMap {
        let dims = Dims::new(values.len(), 1);
        VarianceMap::new(dims, dims.pixels().collect(), values.to_vec()).unwrap()
    }

    #[test]
    fn probability_examples() {
        assert_eq!(variance_to_probability(&vmap(&[1.0, 3.0])).unwrap().probs(), &[0.25, 0.75]);
        assert_eq!(variance_to_probability(&vmap(&[0.0; 4])).unwrap().probs(), &[0.25; 4]);
        assert_eq!(variance_to_probability(&vmap(&[0.0, 2.0, 0.0])).unwrap().probs(), &[0.0, 1.0, 0.0]);
        let empty = VarianceMap::new(Dims::new(2, 2), vec![], vec![]).unwrap();
        assert!(matches!(variance_to_probability(&empty), Err(Error::NoCandidates)));
        assert!(VarianceMap::new(Dims::new(1, 1), vec![Pixel::new(0, 0)], vec![-1.0]).is_err());
    }

    #[test]
    fn concentrated_mass_is_always_picked() {
        let pi = variance_to_probability(&vmap(&[0.0, 0.0, 5.0, 0.0])).unwrap();
        for seed in 0..50 {
            let d = sample_without_replacement(&pi, 1, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(d.pixels, vec![Pixel::new(0, 2)]);
        }
    }

    #[test]
    fn full_draw_is_a_permutation_then_exhausts() {
        let pi = variance_to_probability(&vmap(&[1.0, 0.0, 2.0, 0.0, 3.0])).unwrap();
        let d = sample_without_replacement(&pi, 5, &mut ChaCha8Rng::seed_from_u64(1));
        let mut got = d.pixels.clone();
        got.sort();
        assert_eq!(got, pi.support().to_vec());
        assert!(!d.exhausted);
        // positive-mass pixels come before the zero-mass ones
        assert!(d.pixels[..3].iter().all(|p| p.col % 2 == 0));
        let over = sample_without_replacement(&pi, 9, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(over.exhausted);
        assert_eq!(over.pixels.len(), 5);
    }

    #[test]
    fn pick_rate_matches_distribution() {
        let pi = variance_to_probability(&vmap(&[1.0, 3.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| sample_without_replacement(&pi, 1, &mut rng).pixels[0] == Pixel::new(0, 1))
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((rate - 0.75).abs() < 0.01, "{rate}");
    }

    #[test]
    fn second_draw_renormalizes() {
        // weights 1, 1, 2: P(first = c) = 1/2, then a or b with 1/2 each;
        // P(second = c) = P(first = a) * 2/3 + P(first = b) * 2/3 = 1/3
        let pi = variance_to_probability(&vmap(&[1.0, 1.0, 2.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 60_000;
        let second_c = (0..trials)
            .filter(|_| sample_without_replacement(&pi, 2, &mut rng).pixels[1] == Pixel::new(0, 2))
            .count();
        assert!((second_c as f64 / trials as f64 - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn max_examples() {
        let d = max_sampler(&vmap(&[5.0, 1.0, 5.0]), 2);
        assert_eq!(d.pixels, vec![Pixel::new(0, 0), Pixel::new(0, 2)]);
        let mut v = vec![0.0; 9];
        v[8] = 9.0;
        assert_eq!(max_sampler(&vmap(&v), 1).pixels, vec![Pixel::new(0, 8)]);
        assert_eq!(max_sampler(&vmap(&[1.0, 2.0]), 2).pixels.len(), 2);
        assert!(max_sampler(&vmap(&[1.0, 2.0]), 3).exhausted);
    }

    fn full_scene(w: usize, h: usize) -> Scene {
        let dims = Dims::new(w, h);
        Scene::new("g", None, DepthMap::from_values(dims, vec![Some(1.0); dims.len()]).unwrap()).unwrap()
    }

    #[test]
    fn random_sampler_examples() {
        let s = full_scene(8, 8);
        let all = random_sampler(&s, 64, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(all.pixels.len(), 64);
        let a = random_sampler(&s, 10, &mut ChaCha8Rng::seed_from_u64(3));
        let b = random_sampler(&s, 10, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);

        // inclusion probability of a fixed pixel is B / #valid
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 20_000;
        let hits = (0..trials)
            .filter(|_| random_sampler(&s, 16, &mut rng).pixels.contains(&Pixel::new(3, 3)))
            .count();
        assert!((hits as f64 / trials as f64 - 0.25).abs() < 0.015);
    }

    #[test]
    fn grid_on_full_ground_truth_is_a_lattice() {
        let s = full_scene(16, 16);
        let d = grid_sampler(&s, 16);
        let expected: Vec<Pixel> = [2, 6, 10, 14]
            .iter()
            .flat_map(|&r| [2, 6, 10, 14].map(|c| Pixel::new(r, c)))
            .collect();
        assert_eq!(d.pixels, expected);
        assert_eq!(grid_sampler(&s, 1).pixels, vec![Pixel::new(8, 8)]);
    }

    #[test]
    fn grid_snaps_around_missing_ground_truth() {
        let dims = Dims::new(16, 16);
        let mut values = vec![Some(1.0); dims.len()];
        values[dims.index(Pixel::new(6, 6))] = None;
        let s = Scene::new("g", None, DepthMap::from_values(dims, values).unwrap()).unwrap();
        let d = grid_sampler(&s, 16);
        assert_eq!(d.pixels.len(), 16);
        assert!(!d.pixels.contains(&Pixel::new(6, 6)));
        // row-major first among the L1-adjacent pixels
        assert!(d.pixels.contains(&Pixel::new(5, 6)));
    }

    #[test]
    fn grid_is_budget_exact_on_sparse_ground_truth() {
        let dims = Dims::new(40, 30);
        let values = (0..dims.len()).map(|i| (i % 7 == 0 || i % 11 == 0).then_some(2.0)).collect();
        let s = Scene::new("g", None, DepthMap::from_values(dims, values).unwrap()).unwrap();
        for budget in [1, 5, 37, 100, 255] {
            let d = grid_sampler(&s, budget);
            assert_eq!(d.pixels.len(), budget);
            let mut u = d.pixels.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), budget);
            assert!(u.iter().all(|&p| s.ground_truth.is_valid(p)));
            assert_eq!(grid_sampler(&s, budget), d);
        }
    }
}
