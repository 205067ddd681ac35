//! Deterministic piecewise-planar test scenes.
//!
//! A scene is a ground plane receding towards the top of the image plus a
//! number of rectangles and triangles, each carrying its own depth plane. The
//! nearest surface wins at every pixel. Ground truth is kept at a random
//! subset of pixels to mimic semi-dense annotation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::MeasuredIndex;
use crate::scene::{DepthMap, Dims, RgbImage, SampleMap, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgbMode {
    /// One flat, distinct color per surface.
    FlatColorPerObject,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub n_objects: usize,
    pub depth_range: (f64, f64),
    /// Fraction of pixels with ground truth, in (0, 1].
    pub gt_density: f64,
    pub rgb_mode: RgbMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 160,
            height: 120,
            n_objects: 8,
            depth_range: (2.0, 85.0),
            gt_density: 0.5,
            rgb_mode: RgbMode::FlatColorPerObject,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("synthetic scenes need positive dimensions".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::Config(format!("depth range [{lo}, {hi}]")));
        }
        if !(self.gt_density > 0.0 && self.gt_density <= 1.0) {
            return Err(Error::Config(format!("gt density {} outside (0, 1]", self.gt_density)));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }
}

/// Depth as an affine function of pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub offset: f64,
    pub per_col: f64,
    pub per_row: f64,
}

impl Plane {
    pub fn depth(&self, row: usize, col: usize) -> f64 {
        self.offset + self.per_col * col as f64 + self.per_row * row as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Everywhere,
    /// Inclusive pixel bounds.
    Rect {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
    /// Vertices as (row, col); pixel centers inside the triangle are covered.
    Triangle([(f64, f64); 3]),
}

impl Shape {
    pub fn covers(&self, row: usize, col: usize) -> bool {
        match *self {
            Shape::Everywhere => true,
            Shape::Rect {
                top,
                bottom,
                left,
                right,
            } => (top..=bottom).contains(&row) && (left..=right).contains(&col),
            Shape::Triangle([a, b, c]) => {
                let p = (row as f64, col as f64);
                let edge = |u: (f64, f64), v: (f64, f64)| (v.0 - u.0) * (p.1 - u.1) - (v.1 - u.1) * (p.0 - u.0);
                let (d1, d2, d3) = (edge(a, b), edge(b, c), edge(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    pub plane: Plane,
    pub color: [u8; 3],
}

/// A generated scene together with the surfaces that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: Scene,
    /// Surface 0 is the ground.
    pub surfaces: Vec<Surface>,
    /// Index of the visible surface at each pixel, row-major.
    pub owner: Vec<usize>,
    /// Depth of the visible surface at every pixel, before masking.
    pub dense_depth: Vec<f64>,
}

pub fn generate_scene<R: Rng + ?Sized>(spec: &SynthSpec, id: &str, rng: &mut R) -> Result<GeneratedScene> {
    spec.validate()?;
    let dims = spec.dims();
    let (lo, hi) = spec.depth_range;
    let (w, h) = (spec.width as f64, spec.height as f64);

    // ground recedes from near `lo` at the bottom row to near `hi` at the top
    // row, like a road seen from a fixed camera mount; slope and tilt jitter
    // slightly and the color varies per scene
    let span = hi - lo;
    let near_margin = rng.random_range(0.0..=0.02) * span;
    let far_margin = rng.random_range(0.0..=0.05) * span;
    let (bottom_depth, top_depth) = (lo + near_margin, hi - far_margin);
    let per_row = if spec.height > 1 { -(top_depth - bottom_depth) / (h - 1.0) } else { 0.0 };
    let per_col = if spec.width > 1 {
        rng.random_range(-1.0..=1.0) * near_margin.min(far_margin) / (w - 1.0)
    } else {
        0.0
    };
    let ground = Plane {
        offset: top_depth - per_col * (w - 1.0) / 2.0,
        per_col,
        per_row,
    };
    let mut surfaces = vec![Surface {
        shape: Shape::Everywhere,
        plane: ground,
        color: [rng.random(), rng.random(), rng.random()],
    }];

    for _ in 0..spec.n_objects {
        let bw = rng.random_range((w / 10.0).max(1.0)..=(w / 3.0).max(1.0));
        let bh = rng.random_range((h / 8.0).max(1.0)..=(h / 2.5).max(1.0));
        let left = rng.random_range(0.0..(w - bw).max(0.0) + 1.0).floor();
        let top = rng.random_range(0.0..(h - bh).max(0.0) + 1.0).floor();
        let right = (left + bw - 1.0).clamp(left, w - 1.0);
        let bottom = (top + bh - 1.0).clamp(top, h - 1.0);

        let shape = if rng.random_bool(0.5) {
            Shape::Rect {
                top: top as usize,
                bottom: bottom as usize,
                left: left as usize,
                right: right as usize,
            }
        } else {
            let mut vertex = || (rng.random_range(top..=bottom), rng.random_range(left..=right));
            Shape::Triangle([vertex(), vertex(), vertex()])
        };

        // stand the object in front of the ground behind its lowest row
        let ground_behind = ground.depth(bottom as usize, ((left + right) / 2.0) as usize);
        let center_depth = rng.random_range(lo..=ground_behind.max(lo));
        let room = 0.5 * (center_depth - lo).min(hi - center_depth);
        let half_w = (right - left) / 2.0 + 0.5;
        let half_h = (bottom - top) / 2.0 + 0.5;
        let per_col = rng.random_range(-1.0..=1.0) * room * 0.5 / half_w;
        let per_row = rng.random_range(-1.0..=1.0) * room * 0.5 / half_h;
        let (cr, cc) = ((top + bottom) / 2.0, (left + right) / 2.0);
        let plane = Plane {
            offset: center_depth - per_col * cc - per_row * cr,
            per_col,
            per_row,
        };

        let color = loop {
            let c = [rng.random(), rng.random(), rng.random()];
            if surfaces.iter().all(|s| s.color != c) {
                break c;
            }
        };
        surfaces.push(Surface { shape, plane, color });
    }

    let mut owner = vec![0usize; dims.len()];
    let mut dense_depth = vec![0.0; dims.len()];
    for p in dims.pixels() {
        let i = dims.index(p);
        let mut best = (ground.depth(p.row, p.col).clamp(lo, hi), 0);
        for (s, surface) in surfaces.iter().enumerate().skip(1) {
            if surface.shape.covers(p.row, p.col) {
                let d = surface.plane.depth(p.row, p.col);
                if d < best.0 {
                    best = (d, s);
                }
            }
        }
        dense_depth[i] = best.0;
        owner[i] = best.1;
    }

    let values = dense_depth
        .iter()
        .map(|&d| (spec.gt_density >= 1.0 || rng.random_bool(spec.gt_density)).then_some(d))
        .collect();
    let gt = DepthMap::from_values(dims, values)?;
    let rgb = match spec.rgb_mode {
        RgbMode::FlatColorPerObject => Some(RgbImage::new(dims, owner.iter().map(|&s| surfaces[s].color).collect())?),
        RgbMode::None => None,
    };
    Ok(GeneratedScene {
        scene: Scene::new(id, rgb, gt)?,
        surfaces,
        owner,
        dense_depth,
    })
}

/// Id of the `index`-th scene of a corpus. Each scene is its own drive group.
pub fn scene_id(seed: u64, index: usize) -> String {
    format!("syn{seed}-d{index:04}_f0000")
}

/// Generates `count` scenes; scene `i` uses its own ChaCha stream of `spec.seed`.
pub fn generate_corpus(spec: &SynthSpec, count: usize) -> Result<Vec<Scene>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            generate_scene(spec, &scene_id(spec.seed, i), &mut rng).map(|g| g.scene)
        })
        .collect()
}

/// Dense map assigning every pixel the depth of its nearest measured pixel.
pub fn interpolation_oracle(samples: &SampleMap) -> Result<DepthMap> {
    if samples.is_empty() {
        return Err(Error::Data("interpolation needs at least one measured pixel".into()));
    }
    let index = MeasuredIndex::new(samples);
    let dims = samples.dims();
    let values = dims.pixels().map(|p| Some(index.nearest(p, 1)[0].depth)).collect();
    DepthMap::from_values(dims, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Pixel;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn empty_scene_is_a_single_plane() {
        let spec = SynthSpec {
            n_objects: 0,
            gt_density: 1.0,
            width: 20,
            height: 10,
            ..SynthSpec::default()
        };
        let g = generate_scene(&spec, "p", &mut rng(1)).unwrap();
        assert_eq!(g.scene.ground_truth.valid_count(), 200);
        let d = |r, c| g.scene.ground_truth.get(Pixel::new(r, c)).unwrap();
        assert!((2.0..=2.0 + 1.66 + 1e-9).contains(&d(9, 10)));
        assert!((85.0 - 4.15 - 1e-9..=85.0).contains(&d(0, 10)));
        for c in 0..20 {
            assert!(d(0, c) > d(9, c));
            assert!((d(3, c) - d(4, c) - (d(4, c) - d(5, c))).abs() < 1e-9);
        }
        assert!((d(2, 3) - d(2, 4) - (d(2, 4) - d(2, 5))).abs() < 1e-9);
        assert!(g.owner.iter().all(|&o| o == 0));
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SynthSpec::default();
        let a = generate_scene(&spec, "a", &mut rng(3)).unwrap();
        let b = generate_scene(&spec, "a", &mut rng(3)).unwrap();
        assert_eq!(a.scene, b.scene);
        let c = generate_scene(&spec, "a", &mut rng(4)).unwrap();
        assert_ne!(a.scene, c.scene);
    }

    #[test]
    fn visible_depth_is_planar_and_in_range() {
        let spec = SynthSpec {
            gt_density: 1.0,
            n_objects: 12,
            ..SynthSpec::default()
        };
        for seed in 0..5 {
            let g = generate_scene(&spec, "s", &mut rng(seed)).unwrap();
            let dims = spec.dims();
            for p in dims.pixels() {
                let i = dims.index(p);
                let d = g.scene.ground_truth.get(p).unwrap();
                assert!((2.0..=85.0).contains(&d));
                let s = g.owner[i];
                assert!(g.surfaces[s].shape.covers(p.row, p.col));
                assert!((g.surfaces[s].plane.depth(p.row, p.col) - d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gt_density_matches_within_three_sigma() {
        let spec = SynthSpec {
            gt_density: 0.15,
            ..SynthSpec::default()
        };
        let g = generate_scene(&spec, "s", &mut rng(8)).unwrap();
        let n = spec.dims().len() as f64;
        let mean = n * 0.15;
        let sd = (n * 0.15 * 0.85).sqrt();
        let got = g.scene.ground_truth.valid_count() as f64;
        assert!((got - mean).abs() < 3.0 * sd, "{got} vs {mean}");
    }

    #[test]
    fn colors_are_distinct_per_surface() {
        let g = generate_scene(&SynthSpec::default(), "s", &mut rng(2)).unwrap();
        for (i, a) in g.surfaces.iter().enumerate() {
            for b in &g.surfaces[i + 1..] {
                assert_ne!(a.color, b.color);
            }
        }
        let plain = SynthSpec {
            rgb_mode: RgbMode::None,
            ..SynthSpec::default()
        };
        assert!(generate_scene(&plain, "s", &mut rng(2)).unwrap().scene.rgb.is_none());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = SynthSpec {
            depth_range: (5.0, 5.0),
            ..SynthSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthSpec {
            gt_density: 0.0,
            ..SynthSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oracle_examples() {
        let dims = Dims::new(6, 4);
        let mut s = SampleMap::empty(dims);
        assert!(interpolation_oracle(&s).is_err());
        s.insert(Pixel::new(1, 1), 3.0).unwrap();
        let one = interpolation_oracle(&s).unwrap();
        assert!(one.values().iter().all(|&v| v == Some(3.0)));

        s.insert(Pixel::new(2, 5), 7.0).unwrap();
        let two = interpolation_oracle(&s).unwrap();
        for p in dims.pixels() {
            let (da, db) = (p.l1(Pixel::new(1, 1)), p.l1(Pixel::new(2, 5)));
            let expected = if da <= db { 3.0 } else { 7.0 };
            assert_eq!(two.get(p), Some(expected), "{p}");
        }

        let mut full = SampleMap::empty(dims);
        for p in dims.pixels() {
            full.insert(p, p.row as f64 + p.col as f64).unwrap();
        }
        assert_eq!(interpolation_oracle(&full).unwrap(), full.to_depth_map());
    }

    #[test]
    fn corpus_ids_and_determinism() {
        let spec = SynthSpec {
            width: 32,
            height: 24,
            ..SynthSpec::default()
        };
        let a = generate_corpus(&spec, 3).unwrap();
        assert_eq!(a[1].id, "syn0-d0001_f0000");
        assert_eq!(a, generate_corpus(&spec, 3).unwrap());
    }
}
