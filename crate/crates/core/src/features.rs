//! Per-pixel feature vectors built from the color image and the nearest
//! measured pixels.
//!
//! Layouts with k neighbors (k = 3 gives 26 and 14 features):
//!
//! * RGBd: `[h, s, v, x, y]` then per neighbor `[depth, l1, dx, dy, dh, ds, dv]`
//! * depth only: `[x, y]` then per neighbor `[depth, l1, dx, dy]`
//!
//! `x` is the column and `y` the row. Deltas are neighbor minus query. Missing
//! neighbors are padded with depth 0, distance `width + height` and zero deltas.

use rand::seq::index;
use rand::Rng;

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::forest::FeatureMatrix;
use crate::imaging::{rgb_to_hsv, HsvPixel};
use crate::scene::{Dims, Pixel, SampleMap, Scene};

/// Below this many measured pixels the index scans linearly.
const BRUTE_FORCE_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub pixel: Pixel,
    pub depth: f64,
    pub distance: usize,
}

/// Exact L1 nearest-measured-pixel index over one sample map snapshot.
#[derive(Debug, Clone)]
pub struct MeasuredIndex {
    dims: Dims,
    /// Measured pixels in row-major order.
    points: Vec<(Pixel, f64)>,
    grid: Option<BucketGrid>,
}

#[derive(Debug, Clone)]
struct BucketGrid {
    cell: usize,
    rows: usize,
    cols: usize,
    /// Point indices per cell, row-major within each cell.
    buckets: Vec<Vec<u32>>,
}

impl MeasuredIndex {
    pub fn new(samples: &SampleMap) -> Self {
        let dims = samples.dims();
        let points = samples.measured_row_major();
        let grid = (points.len() >= BRUTE_FORCE_LIMIT).then(|| {
            // about two points per cell on average
            let area = dims.len() as f64;
            let cell = ((2.0 * area / points.len() as f64).sqrt().ceil() as usize).max(1);
            let rows = dims.height.div_ceil(cell);
            let cols = dims.width.div_ceil(cell);
            let mut buckets = vec![Vec::new(); rows * cols];
            for (i, (p, _)) in points.iter().enumerate() {
                buckets[(p.row / cell) * cols + p.col / cell].push(i as u32);
            }
            BucketGrid {
                cell,
                rows,
                cols,
                buckets,
            }
        });
        MeasuredIndex { dims, points, grid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` measured pixels closest to `query` in L1, ordered by distance
    /// and then row-major position.
    pub fn nearest(&self, query: Pixel, k: usize) -> Vec<Neighbor> {
        let mut best: Vec<(usize, u32)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        match &self.grid {
            None => {
                for i in 0..self.points.len() {
                    self.offer(query, i as u32, k, &mut best);
                }
            }
            Some(grid) => self.search_grid(grid, query, k, &mut best),
        }
        best.into_iter()
            .map(|(distance, i)| {
                let (pixel, depth) = self.points[i as usize];
                Neighbor { pixel, depth, distance }
            })
            .collect()
    }

    fn offer(&self, query: Pixel, i: u32, k: usize, best: &mut Vec<(usize, u32)>) {
        let key = (query.l1(self.points[i as usize].0), i);
        if best.len() == k && key >= best[k - 1] {
            return;
        }
        let pos = best.partition_point(|b| *b < key);
        best.insert(pos, key);
        best.truncate(k);
    }

    fn search_grid(&self, grid: &BucketGrid, query: Pixel, k: usize, best: &mut Vec<(usize, u32)>) {
        let (qr, qc) = ((query.row / grid.cell) as isize, (query.col / grid.cell) as isize);
        let s = grid.cell as isize;
        let (row, col) = (query.row as isize, query.col as isize);
        for r in 0isize.. {
            let (r0, r1, c0, c1) = (qr - r, qr + r, qc - r, qc + r);
            let last_col = grid.cols as isize - 1;
            let mut visit = |cr: isize, cc: isize| {
                for &i in &grid.buckets[cr as usize * grid.cols + cc as usize] {
                    self.offer(query, i, k, best);
                }
            };
            for cr in r0.max(0)..=r1.min(grid.rows as isize - 1) {
                if cr == r0 || cr == r1 {
                    for cc in c0.max(0)..=c1.min(last_col) {
                        visit(cr, cc);
                    }
                } else {
                    // interior rows of the ring only contribute their two end cells
                    if c0 >= 0 {
                        visit(cr, c0);
                    }
                    if c1 <= last_col {
                        visit(cr, c1);
                    }
                }
            }
            // smallest distance to any pixel outside the visited block of cells
            let mut bound = isize::MAX;
            if r0 > 0 {
                bound = bound.min(row - (r0 * s - 1));
            }
            if c0 > 0 {
                bound = bound.min(col - (c0 * s - 1));
            }
            if r1 < grid.rows as isize - 1 {
                bound = bound.min((r1 + 1) * s - row);
            }
            if c1 < grid.cols as isize - 1 {
                bound = bound.min((c1 + 1) * s - col);
            }
            if bound == isize::MAX {
                return;
            }
            if best.len() == k && (best[k - 1].0 as isize) < bound {
                return;
            }
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
}

/// The `k` measured pixels nearest to `pixel` in L1 distance.
pub fn nearest_measured(samples: &SampleMap, pixel: Pixel, k: usize) -> Vec<Neighbor> {
    MeasuredIndex::new(samples).nearest(pixel, k)
}

pub fn feature_len(scenario: Scenario, k: usize) -> usize {
    match scenario {
        Scenario::Rgbd => 5 + 7 * k,
        Scenario::DOnly => 2 + 4 * k,
    }
}

/// Feature construction against a fixed snapshot of a scene's measurements.
#[derive(Debug, Clone)]
pub struct FeatureBuilder {
    scenario: Scenario,
    k: usize,
    hsv: Option<Vec<HsvPixel>>,
    index: MeasuredIndex,
}

impl FeatureBuilder {
    pub fn new(scene: &Scene, scenario: Scenario, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("need at least one neighbor".into()));
        }
        let hsv = match scenario {
            Scenario::Rgbd => {
                let img = scene.rgb.as_ref().ok_or_else(|| {
                    Error::Config(format!("scene {} has no rgb image for the rgbd scenario", scene.id))
                })?;
                Some(img.data().iter().map(|&c| rgb_to_hsv(c)).collect())
            }
            Scenario::DOnly => None,
        };
        Ok(FeatureBuilder {
            scenario,
            k,
            hsv,
            index: MeasuredIndex::new(&scene.samples),
        })
    }

    pub fn len(&self) -> usize {
        feature_len(self.scenario, self.k)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes the features of `p` into `out`, which must have [`Self::len`] slots.
    pub fn write(&self, p: Pixel, out: &mut [f64]) {
        let dims = self.index.dims();
        let (x, y) = (p.col as f64, p.row as f64);
        let far = (dims.width + dims.height) as f64;
        let neighbors = self.index.nearest(p, self.k);
        let mut o = 0;
        let mut put = |v: f64| {
            out[o] = v;
            o += 1;
        };
        match &self.hsv {
            Some(hsv) => {
                let own = hsv[dims.index(p)];
                put(own.h);
                put(own.s);
                put(own.v);
                put(x);
                put(y);
                for j in 0..self.k {
                    match neighbors.get(j) {
                        Some(n) => {
                            let other = hsv[dims.index(n.pixel)];
                            put(n.depth);
                            put(n.distance as f64);
                            put(n.pixel.col as f64 - x);
                            put(n.pixel.row as f64 - y);
                            put(other.h - own.h);
                            put(other.s - own.s);
                            put(other.v - own.v);
                        }
                        None => {
                            put(0.0);
                            put(far);
                            for _ in 0..5 {
                                put(0.0);
                            }
                        }
                    }
                }
            }
            None => {
                put(x);
                put(y);
                for j in 0..self.k {
                    match neighbors.get(j) {
                        Some(n) => {
                            put(n.depth);
                            put(n.distance as f64);
                            put(n.pixel.col as f64 - x);
                            put(n.pixel.row as f64 - y);
                        }
                        None => {
                            put(0.0);
                            put(far);
                            put(0.0);
                            put(0.0);
                        }
                    }
                }
            }
        }
    }

    pub fn features(&self, p: Pixel) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.write(p, &mut out);
        out
    }

    pub fn matrix(&self, pixels: &[Pixel]) -> FeatureMatrix {
        let cols = self.len();
        let mut data = vec![0.0; pixels.len() * cols];
        for (p, out) in pixels.iter().zip(data.chunks_exact_mut(cols)) {
            self.write(*p, out);
        }
        FeatureMatrix::new(pixels.len(), cols, data).expect("sized above")
    }
}

pub fn build_features(scene: &Scene, pixel: Pixel, scenario: Scenario, k: usize) -> Result<Vec<f64>> {
    if !scene.dims().contains(pixel) {
        return Err(Error::Dimension(format!("pixel {pixel} outside {}", scene.dims())));
    }
    Ok(FeatureBuilder::new(scene, scenario, k)?.features(pixel))
}

/// Training rows for one scene.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
    pub pixels: Vec<Pixel>,
}

/// Features and ground-truth targets for `min(subsample, #valid)` distinct
/// valid pixels drawn uniformly without replacement.
pub fn build_training_matrix<R: Rng + ?Sized>(
    scene: &Scene,
    subsample: usize,
    scenario: Scenario,
    k: usize,
    rng: &mut R,
) -> Result<TrainingSet> {
    let valid = scene.ground_truth.valid_indices();
    if valid.is_empty() {
        return Err(Error::EmptyScene);
    }
    let dims = scene.dims();
    let n = subsample.min(valid.len());
    let pixels: Vec<Pixel> = index::sample(rng, valid.len(), n)
        .into_iter()
        .map(|i| dims.pixel(valid[i]))
        .collect();
    let builder = FeatureBuilder::new(scene, scenario, k)?;
    let x = builder.matrix(&pixels);
    let y = pixels
        .iter()
        .map(|&p| scene.ground_truth.get(p).expect("valid pixel"))
        .collect();
    Ok(TrainingSet { x, y, pixels })
}
