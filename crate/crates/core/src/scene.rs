//! Scene model: an optional color image, a semi-dense ground-truth depth map
//! and the set of depth measurements taken so far.
//!
//! Missing ground truth and unmeasured pixels are `None` in memory. The `-1`
//! and `0` sentinels only exist at file boundaries.

use std::fmt;

use crate::error::{Error, Result};

/// Pixel position on the image grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub fn new(row: usize, col: usize) -> Self {
        Pixel { row, col }
    }

    pub fn l1(self, other: Pixel) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for Pixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Width and height in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    pub fn len(self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn index(self, p: Pixel) -> usize {
        p.row * self.width + p.col
    }

    pub fn pixel(self, index: usize) -> Pixel {
        Pixel::new(index / self.width, index % self.width)
    }

    pub fn contains(self, p: Pixel) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn pixels(self) -> impl Iterator<Item = Pixel> {
        (0..self.len()).map(move |i| self.pixel(i))
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Dense grid of depths in meters; `None` marks pixels without a value.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    dims: Dims,
    values: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn missing(dims: Dims) -> Result<Self> {
        Self::from_values(dims, vec![None; dims.len()])
    }

    pub fn from_values(dims: Dims, values: Vec<Option<f64>>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension(format!("depth map must be non-empty, got {dims}")));
        }
        if values.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{} values for a {dims} depth map",
                values.len()
            )));
        }
        if let Some((i, d)) = values
            .iter()
            .enumerate()
            .find_map(|(i, v)| v.filter(|d| !d.is_finite() || *d < 0.0).map(|d| (i, d)))
        {
            return Err(Error::Data(format!(
                "depth {d} at pixel {} is not a finite non-negative value",
                dims.pixel(i)
            )));
        }
        Ok(DepthMap { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn get(&self, p: Pixel) -> Option<f64> {
        self.values[self.dims.index(p)]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn is_valid(&self, p: Pixel) -> bool {
        self.get(p).is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Row-major indices of pixels holding a value.
    pub fn valid_indices(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|_| i))
            .collect()
    }
}

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    dims: Dims,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(dims: Dims, data: Vec<[u8; 3]>) -> Result<Self> {
        if dims.is_empty() || data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{} pixels for a {dims} rgb image",
                data.len()
            )));
        }
        Ok(RgbImage { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, p: Pixel) -> [u8; 3] {
        self.data[self.dims.index(p)]
    }

    pub fn data(&self) -> &[[u8; 3]] {
        &self.data
    }
}

/// Measured depths. Positions are kept in the order they were measured.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMap {
    dims: Dims,
    entries: Vec<Option<f64>>,
    order: Vec<Pixel>,
}

impl SampleMap {
    pub fn empty(dims: Dims) -> Self {
        SampleMap {
            dims,
            entries: vec![None; dims.len()],
            order: Vec::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn count(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, p: Pixel) -> Option<f64> {
        self.entries[self.dims.index(p)]
    }

    pub fn is_measured(&self, p: Pixel) -> bool {
        self.get(p).is_some()
    }

    /// Measured pixels in measurement order.
    pub fn measured(&self) -> &[Pixel] {
        &self.order
    }

    /// Measured pixels with their depth, in row-major order.
    pub fn measured_row_major(&self) -> Vec<(Pixel, f64)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|d| (self.dims.pixel(i), d)))
            .collect()
    }

    /// Records a measurement. Re-measuring a pixel is rejected.
    pub fn insert(&mut self, p: Pixel, depth: f64) -> Result<()> {
        if !self.dims.contains(p) {
            return Err(Error::Dimension(format!("pixel {p} outside {}", self.dims)));
        }
        if !depth.is_finite() || depth < 0.0 {
            return Err(Error::Data(format!("measured depth {depth} at {p}")));
        }
        let slot = &mut self.entries[self.dims.index(p)];
        if slot.is_some() {
            return Err(Error::Data(format!("pixel {p} is already measured")));
        }
        *slot = Some(depth);
        self.order.push(p);
        Ok(())
    }

    /// The map as a depth map (unmeasured pixels become missing).
    pub fn to_depth_map(&self) -> DepthMap {
        DepthMap {
            dims: self.dims,
            values: self.entries.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub rgb: Option<RgbImage>,
    pub ground_truth: DepthMap,
    pub samples: SampleMap,
}

impl Scene {
    /// A scene with no measurements yet.
    pub fn new(id: impl Into<String>, rgb: Option<RgbImage>, ground_truth: DepthMap) -> Result<Self> {
        let dims = ground_truth.dims();
        if let Some(img) = &rgb {
            if img.dims() != dims {
                return Err(Error::Dimension(format!(
                    "rgb is {} but ground truth is {dims}",
                    img.dims()
                )));
            }
        }
        Ok(Scene {
            id: id.into(),
            rgb,
            samples: SampleMap::empty(dims),
            ground_truth,
        })
    }

    pub fn dims(&self) -> Dims {
        self.ground_truth.dims()
    }

    /// Drops all measurements.
    pub fn reset_samples(&mut self) {
        self.samples = SampleMap::empty(self.dims());
    }

    /// Valid ground-truth pixels that have not been measured, row-major.
    pub fn sampling_support(&self) -> Vec<Pixel> {
        let dims = self.dims();
        dims.pixels()
            .filter(|&p| self.ground_truth.is_valid(p) && !self.samples.is_measured(p))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DimensionMismatch,
    SampleOutsideValidGt,
    SampleCountMismatch,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::DimensionMismatch => "dimension mismatch",
            ViolationKind::SampleOutsideValidGt => "sample outside valid GT",
            ViolationKind::SampleCountMismatch => "sample count mismatch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub pixel: Option<Pixel>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pixel {
            Some(p) => write!(f, "{} at {p}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Lists every broken scene invariant. An empty list means the scene is consistent.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let dims = scene.ground_truth.dims();
    if let Some(img) = &scene.rgb {
        if img.dims() != dims {
            out.push(Violation {
                kind: ViolationKind::DimensionMismatch,
                pixel: None,
            });
        }
    }
    if scene.samples.dims() != dims {
        out.push(Violation {
            kind: ViolationKind::DimensionMismatch,
            pixel: None,
        });
        return out;
    }
    let measured = scene.samples.measured_row_major();
    if measured.len() != scene.samples.count() {
        out.push(Violation {
            kind: ViolationKind::SampleCountMismatch,
            pixel: None,
        });
    }
    for (p, _) in measured {
        if !scene.ground_truth.is_valid(p) {
            out.push(Violation {
                kind: ViolationKind::SampleOutsideValidGt,
                pixel: Some(p),
            });
        }
    }
    out
}
