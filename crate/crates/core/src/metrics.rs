//! Depth completion metrics, variance/error correlation and the closed-form
//! expected utilities of the single-pick sampling strategies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{DepthMap, Pixel};

/// Threshold of the δ1 accuracy measure (strict inequality).
pub const DELTA1_THRESHOLD: f64 = 1.25;

/// RMSE and MAE are in millimeters; inputs are meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub rel: f64,
    pub delta1: f64,
    pub n_pixels: usize,
}

/// Running sums over (prediction, ground truth) pairs. Merging accumulators
/// pools pixels, so a corpus report weights every pixel equally.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    sq_err: f64,
    abs_err: f64,
    rel_err: f64,
    within_delta1: usize,
    n: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: f64, gt: f64) -> Result<()> {
        if !gt.is_finite() || gt <= 0.0 {
            return Err(Error::Data(format!("ground truth {gt} is not a positive depth")));
        }
        if !pred.is_finite() || pred <= 0.0 {
            return Err(Error::Data(format!("prediction {pred} is not a positive depth")));
        }
        let err = pred - gt;
        self.sq_err += err * err;
        self.abs_err += err.abs();
        self.rel_err += err.abs() / gt;
        if (pred / gt).max(gt / pred) < DELTA1_THRESHOLD {
            self.within_delta1 += 1;
        }
        self.n += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.sq_err += other.sq_err;
        self.abs_err += other.abs_err;
        self.rel_err += other.rel_err;
        self.within_delta1 += other.within_delta1;
        self.n += other.n;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::Data("no valid ground-truth pixels to evaluate".into()));
        }
        let n = self.n as f64;
        Ok(MetricReport {
            rmse_mm: (self.sq_err / n).sqrt() * 1000.0,
            mae_mm: self.abs_err / n * 1000.0,
            rel: self.rel_err / n,
            delta1: self.within_delta1 as f64 / n,
            n_pixels: self.n,
        })
    }
}

/// Accumulates every pixel with valid ground truth.
pub fn accumulate(pred: &DepthMap, gt: &DepthMap) -> Result<MetricAccumulator> {
    if pred.dims() != gt.dims() {
        return Err(Error::Dimension(format!(
            "prediction is {} but ground truth is {}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut acc = MetricAccumulator::default();
    for (i, (p, g)) in pred.values().iter().zip(gt.values()).enumerate() {
        let Some(g) = *g else { continue };
        let p = p.ok_or_else(|| {
            Error::Data(format!("no prediction at valid pixel {}", gt.dims().pixel(i)))
        })?;
        acc.add(p, g)?;
    }
    Ok(acc)
}

/// RMSE, MAE, REL and δ1 over the valid ground-truth pixels.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap) -> Result<MetricReport> {
    accumulate(pred, gt)?.report()
}

/// Pearson correlation between two aligned series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("series of {} and {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is constant".into()));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between per-pixel ensemble variance and the squared error of
/// the ensemble mean, over the same pixels.
pub fn variance_error_correlation(variance: &[f64], sq_error: &[f64]) -> Result<f64> {
    pearson(variance, sq_error)
}

/// Expected utilities of probability matching, uniform random choice and
/// greedy maximum when picking one pixel with utilities `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityTriple {
    pub u_pm: f64,
    pub u_rnd: f64,
    pub u_max: f64,
    /// Set when every utility is zero; all three values are then 0.
    pub degenerate: bool,
}

pub fn utility_analysis(u: &[f64]) -> Result<UtilityTriple> {
    if u.is_empty() {
        return Err(Error::Data("empty utility vector".into()));
    }
    if let Some((index, &value)) = u.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NegativeUtility { index, value });
    }
    let sum: f64 = u.iter().sum();
    if sum == 0.0 {
        return Ok(UtilityTriple {
            u_pm: 0.0,
            u_rnd: 0.0,
            u_max: 0.0,
            degenerate: true,
        });
    }
    let sum_sq: f64 = u.iter().map(|v| v * v).sum();
    Ok(UtilityTriple {
        u_pm: sum_sq / sum,
        u_rnd: sum / u.len() as f64,
        u_max: u.iter().copied().fold(0.0, f64::max),
        degenerate: false,
    })
}

/// Mean L1 distance over all unordered pairs; 0 for fewer than two pixels.
pub fn mean_pairwise_l1(pixels: &[Pixel]) -> f64 {
    let n = pixels.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0u64;
    for (i, a) in pixels.iter().enumerate() {
        for b in &pixels[i + 1..] {
            total += a.l1(*b) as u64;
        }
    }
    total as f64 / (n * (n - 1) / 2) as f64
}

/// One CSV row of evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scene_id: String,
    pub sampler: String,
    pub budget: usize,
    pub phases: usize,
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub rel: f64,
    pub delta1: f64,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Dims;

    fn one(p: f64, g: f64) -> MetricReport {
        let d = Dims::new(1, 1);
        evaluate(
            &DepthMap::from_values(d, vec![Some(p)]).unwrap(),
            &DepthMap::from_values(d, vec![Some(g)]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn metric_examples() {
        let r = one(3.0, 1.0);
        assert_eq!((r.rmse_mm, r.mae_mm, r.rel, r.delta1), (2000.0, 2000.0, 2.0, 0.0));
        assert_eq!(one(1.2, 1.0).delta1, 1.0);
        assert_eq!(one(1.25, 1.0).delta1, 0.0);
        let r = one(4.0, 4.0);
        assert_eq!((r.rmse_mm, r.mae_mm, r.rel, r.delta1), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn only_valid_pixels_count() {
        let d = Dims::new(3, 1);
        let gt = DepthMap::from_values(d, vec![Some(2.0), None, Some(4.0)]).unwrap();
        let pred = DepthMap::from_values(d, vec![Some(2.0), Some(100.0), Some(5.0)]).unwrap();
        let r = evaluate(&pred, &gt).unwrap();
        assert_eq!(r.n_pixels, 2);
        assert!((r.mae_mm - 500.0).abs() < 1e-9);
    }

    #[test]
    fn metric_errors() {
        let d = Dims::new(1, 1);
        let zero = DepthMap::from_values(d, vec![Some(0.0)]).unwrap();
        let one_m = DepthMap::from_values(d, vec![Some(1.0)]).unwrap();
        assert!(matches!(evaluate(&one_m, &zero), Err(Error::Data(_))));
        let none = DepthMap::missing(d).unwrap();
        assert!(matches!(evaluate(&one_m, &none), Err(Error::Data(_))));
        let big = DepthMap::missing(Dims::new(2, 1)).unwrap();
        assert!(matches!(evaluate(&big, &one_m), Err(Error::Dimension(_))));
    }

    #[test]
    fn pooled_is_not_mean_of_scenes() {
        let mut a = MetricAccumulator::default();
        a.add(2.0, 1.0).unwrap();
        let mut b = MetricAccumulator::default();
        b.add(1.0, 1.0).unwrap();
        b.add(1.0, 1.0).unwrap();
        b.add(1.0, 1.0).unwrap();
        let mut pooled = a;
        pooled.merge(&b);
        // sqrt(1/4) m = 500 mm, not (1000 + 0) / 2
        assert_eq!(pooled.report().unwrap().rmse_mm, 500.0);
    }

    #[test]
    fn correlation_examples() {
        let v = [0.1, 0.5, 0.2, 0.9];
        let twice: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let neg: Vec<f64> = v.iter().map(|x| 3.0 - x).collect();
        assert!((variance_error_correlation(&v, &twice).unwrap() - 1.0).abs() < 1e-12);
        assert!((variance_error_correlation(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&v, &[1.0; 4]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn independent_series_are_uncorrelated() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!(pearson(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn utility_examples() {
        let t = utility_analysis(&[3.0, 1.0]).unwrap();
        assert_eq!((t.u_max, t.u_rnd, t.u_pm), (3.0, 2.0, 2.5));
        let t = utility_analysis(&[0.0, 0.0, 5.0, 0.0]).unwrap();
        assert_eq!(t.u_pm, t.u_max);
        assert_eq!(t.u_pm, 4.0 * t.u_rnd);
        let t = utility_analysis(&[2.0; 5]).unwrap();
        assert_eq!((t.u_pm, t.u_rnd, t.u_max), (2.0, 2.0, 2.0));
        let t = utility_analysis(&[0.0; 3]).unwrap();
        assert!(t.degenerate);
        assert!(matches!(utility_analysis(&[1.0, -0.5]), Err(Error::NegativeUtility { index: 1, .. })));
    }

    #[test]
    fn pairwise_spread() {
        let p = [Pixel::new(0, 0), Pixel::new(0, 2), Pixel::new(2, 2)];
        // distances 2, 4, 2
        assert!((mean_pairwise_l1(&p) - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(mean_pairwise_l1(&p[..1]), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn rmse_dominates_mae_and_delta1_is_symmetric(
            pairs in proptest::collection::vec((0.1f64..90.0, 0.1f64..90.0), 1..50)
        ) {
            let mut fwd = MetricAccumulator::default();
            let mut rev = MetricAccumulator::default();
            for &(p, g) in &pairs {
                fwd.add(p, g).unwrap();
                rev.add(g, p).unwrap();
            }
            let (f, r) = (fwd.report().unwrap(), rev.report().unwrap());
            proptest::prop_assert!(f.rmse_mm + 1e-9 >= f.mae_mm);
            proptest::prop_assert_eq!(f.delta1, r.delta1);
            proptest::prop_assert!((0.0..=1.0).contains(&f.delta1));
        }

        #[test]
        fn utility_inequalities(u in proptest::collection::vec(0.0f64..10.0, 1..200)) {
            let t = utility_analysis(&u).unwrap();
            proptest::prop_assume!(!t.degenerate);
            let n = u.len() as f64;
            let sum: f64 = u.iter().sum();
            proptest::prop_assert!(t.u_rnd <= t.u_pm + 1e-12);
            proptest::prop_assert!(t.u_pm <= t.u_max + 1e-12);
            proptest::prop_assert!(t.u_pm + 1e-12 >= t.u_max / n.sqrt());
            proptest::prop_assert!(t.u_pm + 1e-12 >= t.u_max / sum * t.u_max);
        }
    }
}
