//! PNG input/output for depth maps and color images, HSV conversion,
//! cropping and the tab-separated scene manifest.
//!
//! Depth PNGs follow the KITTI convention: 16-bit grayscale, value =
//! floor(meters * 256), and 0 for pixels without depth.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scene::{DepthMap, Dims, Pixel, RgbImage, SampleMap, Scene};

pub const DEPTH_SCALE: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    /// Hue in degrees, [0, 360).
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone RGB to HSV. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> HsvPixel {
    let [r, g, b] = rgb.map(|c| f64::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let s = if max > 0.0 { chroma / max } else { 0.0 };
    let h = if chroma == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    let h = if h >= 360.0 { h - 360.0 } else { h };
    HsvPixel { h, s, v: max }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn read_png(path: &Path) -> Result<(png::ColorType, png::BitDepth, Dims, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    let dims = Dims::new(info.width as usize, info.height as usize);
    Ok((info.color_type, info.bit_depth, dims, buf))
}

fn write_png(path: &Path, dims: Dims, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), dims.width as u32, dims.height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Raw 16-bit value for a depth, or `None` when it does not fit.
pub fn depth_to_raw(depth: f64) -> Option<u16> {
    if !depth.is_finite() || !(0.0..256.0).contains(&depth) {
        return None;
    }
    Some(((depth * DEPTH_SCALE).floor() as u32).clamp(1, u16::MAX as u32) as u16)
}

pub fn raw_to_depth(raw: u16) -> Option<f64> {
    (raw > 0).then(|| f64::from(raw) / DEPTH_SCALE)
}

pub fn load_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let (color, bit_depth, dims, buf) = read_png(path)?;
    if color != png::ColorType::Grayscale || bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected 16-bit grayscale, found {color:?} at {bit_depth:?}"),
        });
    }
    let values = buf
        .chunks_exact(2)
        .map(|b| raw_to_depth(u16::from_be_bytes([b[0], b[1]])))
        .collect();
    DepthMap::from_values(dims, values)
}

pub fn save_depth_png(map: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dims = map.dims();
    let mut data = Vec::with_capacity(dims.len() * 2);
    for (i, v) in map.values().iter().enumerate() {
        let raw = match *v {
            None => 0,
            Some(d) => depth_to_raw(d).ok_or_else(|| {
                let p = dims.pixel(i);
                Error::DepthRange {
                    row: p.row,
                    col: p.col,
                    depth: d,
                }
            })?,
        };
        data.extend_from_slice(&raw.to_be_bytes());
    }
    write_png(path, dims, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn load_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let (color, bit_depth, dims, buf) = read_png(path)?;
    if color != png::ColorType::Rgb || bit_depth != png::BitDepth::Eight {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected 8-bit RGB, found {color:?} at {bit_depth:?}"),
        });
    }
    let data = buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    RgbImage::new(dims, data)
}

pub fn save_rgb_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = img.data().iter().flatten().copied().collect();
    write_png(path.as_ref(), img.dims(), png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

/// Crops a `width` x `height` window flush with the bottom edge and
/// horizontally centered. An odd leftover column goes to the left margin.
pub fn crop_bottom_center(scene: &Scene, width: usize, height: usize) -> Result<Scene> {
    let src = scene.dims();
    if width == 0 || height == 0 || width > src.width || height > src.height {
        return Err(Error::Dimension(format!(
            "cannot crop {width}x{height} out of {src}"
        )));
    }
    let left = (src.width - width).div_ceil(2);
    let top = src.height - height;
    let dims = Dims::new(width, height);
    let source = |p: Pixel| Pixel::new(p.row + top, p.col + left);

    let gt = DepthMap::from_values(dims, dims.pixels().map(|p| scene.ground_truth.get(source(p))).collect())?;
    let rgb = scene
        .rgb
        .as_ref()
        .map(|img| RgbImage::new(dims, dims.pixels().map(|p| img.get(source(p))).collect()))
        .transpose()?;
    let mut samples = SampleMap::empty(dims);
    for &p in scene.samples.measured() {
        if p.row >= top && p.col >= left && p.col < left + width {
            let q = Pixel::new(p.row - top, p.col - left);
            samples.insert(q, scene.samples.get(p).expect("measured"))?;
        }
    }
    Ok(Scene {
        id: scene.id.clone(),
        rgb,
        ground_truth: gt,
        samples,
    })
}

/// One manifest line: scene id, optional RGB path and ground-truth depth path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub rgb: Option<PathBuf>,
    pub depth: PathBuf,
}

/// Reads a tab-separated manifest. Relative paths resolve against the
/// manifest's directory. Blank lines and `#` comments are skipped; `-` marks
/// a missing RGB path.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |s: &str| {
        let p = Path::new(s);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[2].is_empty() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "expected id<TAB>rgb<TAB>depth".into(),
            });
        }
        out.push(ManifestEntry {
            id: fields[0].to_string(),
            rgb: (!fields[1].is_empty() && fields[1] != "-").then(|| resolve(fields[1])),
            depth: resolve(fields[2]),
        });
    }
    Ok(out)
}

/// Writes a manifest with paths exactly as given.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        let rgb = e
            .rgb
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "-".into());
        text.push_str(&format!("{}\t{}\t{}\n", e.id, rgb, e.depth.display()));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scene(entry: &ManifestEntry) -> Result<Scene> {
    let gt = load_depth_png(&entry.depth)?;
    let rgb = entry.rgb.as_ref().map(load_rgb_png).transpose()?;
    Scene::new(entry.id.clone(), rgb, gt)
}

/// Loads every scene of a manifest, optionally cropping each one.
pub fn load_manifest_scenes(path: impl AsRef<Path>, crop: Option<(usize, usize)>) -> Result<Vec<Scene>> {
    read_manifest(path)?
        .iter()
        .map(|e| {
            let s = load_scene(e)?;
            match crop {
                Some((w, h)) => crop_bottom_center(&s, w, h),
                None => Ok(s),
            }
        })
        .collect()
}
