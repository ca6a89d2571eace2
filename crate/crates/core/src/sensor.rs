//! Range images, their point-cloud form, and angular slicing of a scan
//! into streaming wedges.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_two_pi, Vec2};

/// Laser-by-azimuth grid of ranges. Non-positive range means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    rows: usize,
    cols: usize,
    ranges: Vec<f32>,
    intensities: Vec<f32>,
    inclinations: Vec<f64>,
}

impl RangeImage {
    pub fn new(
        rows: usize,
        cols: usize,
        ranges: Vec<f32>,
        intensities: Vec<f32>,
        inclinations: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("range image needs rows, cols >= 1".into()));
        }
        let cells = rows * cols;
        if ranges.len() != cells || intensities.len() != cells || inclinations.len() != rows {
            return Err(Error::InvalidInput(format!(
                "range image {rows}x{cols}: got {} ranges, {} intensities, {} inclinations",
                ranges.len(),
                intensities.len(),
                inclinations.len()
            )));
        }
        if ranges.iter().any(|r| r.is_nan() || r.is_infinite()) {
            return Err(Error::InvalidInput("range image contains non-finite ranges".into()));
        }
        Ok(RangeImage {
            rows,
            cols,
            ranges,
            intensities,
            inclinations,
        })
    }

    /// An image with no returns.
    pub fn empty(rows: usize, cols: usize, inclinations: Vec<f64>) -> Result<Self> {
        RangeImage::new(
            rows,
            cols,
            vec![0.0; rows * cols],
            vec![0.0; rows * cols],
            inclinations,
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn inclinations(&self) -> &[f64] {
        &self.inclinations
    }

    pub fn ranges(&self) -> &[f32] {
        &self.ranges
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn range(&self, row: usize, col: usize) -> f32 {
        self.ranges[row * self.cols + col]
    }

    pub fn intensity(&self, row: usize, col: usize) -> f32 {
        self.intensities[row * self.cols + col]
    }

    /// Ray azimuth of a column: the center of `[2πc/cols, 2π(c+1)/cols)`.
    pub fn azimuth_of_col(&self, col: usize) -> f64 {
        column_azimuth(col, self.cols)
    }
}

pub fn column_azimuth(col: usize, cols: usize) -> f64 {
    TAU * (col as f64 + 0.5) / cols as f64
}

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    /// `atan2(y, x)` wrapped into `[0, 2π)`.
    pub azimuth: f64,
    pub col: u32,
    /// Position in the scan's streaming (arrival) order.
    pub seq: u32,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64, col: u32, seq: u32) -> Self {
        Point {
            x,
            y,
            z,
            intensity,
            azimuth: wrap_two_pi(y.atan2(x)),
            col,
            seq,
        }
    }

    pub fn xy(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn planar_range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Converts every returning cell to a point, in column-then-row order.
pub fn range_image_to_points(img: &RangeImage) -> Vec<Point> {
    let mut out = Vec::new();
    for col in 0..img.cols {
        let az = img.azimuth_of_col(col);
        let (saz, caz) = az.sin_cos();
        for row in 0..img.rows {
            let r = img.range(row, col) as f64;
            if r <= 0.0 {
                continue;
            }
            let (sinc, cinc) = img.inclinations[row].sin_cos();
            let seq = out.len() as u32;
            out.push(Point::new(
                r * cinc * caz,
                r * cinc * saz,
                r * sinc,
                img.intensity(row, col) as f64,
                col as u32,
                seq,
            ));
        }
    }
    out
}

/// Slice `index` of `n` over one rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceSpec {
    pub n: usize,
    pub index: usize,
}

impl SliceSpec {
    pub fn new(n: usize, index: usize) -> Result<Self> {
        if n == 0 || index >= n {
            return Err(Error::InvalidInput(format!(
                "slice index {index} out of range for n = {n}"
            )));
        }
        Ok(SliceSpec { n, index })
    }

    pub fn bounds(&self) -> (f64, f64) {
        bounds_unchecked(self.n, self.index)
    }

    pub fn is_last(&self) -> bool {
        self.index + 1 == self.n
    }
}

fn bounds_unchecked(n: usize, index: usize) -> (f64, f64) {
    let edge = |i: usize| {
        if i == n {
            TAU
        } else {
            TAU * i as f64 / n as f64
        }
    };
    (edge(index), edge(index + 1))
}

/// Half-open azimuth interval `[lo, hi)` of slice `index` of `n`.
pub fn wedge_bounds(n: usize, index: usize) -> Result<(f64, f64)> {
    SliceSpec::new(n, index).map(|s| s.bounds())
}

/// Slice index that owns `azimuth` (already wrapped into `[0, 2π)`).
pub fn wedge_index(azimuth: f64, n: usize) -> usize {
    let az = wrap_two_pi(azimuth);
    let mut idx = ((az * n as f64 / TAU).floor() as usize).min(n - 1);
    // settle rounding disagreements against the exact bounds
    loop {
        let (lo, hi) = bounds_unchecked(n, idx);
        if az < lo && idx > 0 {
            idx -= 1;
        } else if az >= hi && idx + 1 < n {
            idx += 1;
        } else {
            return idx;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wedge {
    pub spec: SliceSpec,
    pub points: Vec<Point>,
}

impl Wedge {
    pub fn bounds(&self) -> (f64, f64) {
        self.spec.bounds()
    }
}

/// Partitions a cloud into `n` wedges by azimuth, keeping input order
/// within each wedge.
pub fn slice_points(points: &[Point], n: usize) -> Result<Vec<Wedge>> {
    if n == 0 {
        return Err(Error::InvalidInput("slice count must be >= 1".into()));
    }
    let mut wedges: Vec<Wedge> = (0..n)
        .map(|index| Wedge {
            spec: SliceSpec { n, index },
            points: Vec::new(),
        })
        .collect();
    for p in points {
        wedges[wedge_index(p.azimuth, n)].points.push(*p);
    }
    Ok(wedges)
}

/// Writes `(x, y, z, intensity)` little-endian f32 records.
pub fn write_point_cloud(path: &Path, points: &[Point]) -> Result<()> {
    let mut buf = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a headerless point-cloud file. `cols` is the azimuth bin count
/// used to recover each point's column.
pub fn read_point_cloud(path: &Path, cols: usize) -> Result<Vec<Point>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Config(format!(
            "{}: length {} is not a multiple of 16 bytes",
            path.display(),
            bytes.len()
        )));
    }
    let cols = cols.max(1);
    let floats = le_f32s(&bytes);
    Ok(floats
        .chunks_exact(4)
        .enumerate()
        .map(|(i, rec)| {
            let (x, y) = (rec[0] as f64, rec[1] as f64);
            let az = wrap_two_pi(y.atan2(x));
            let col = ((az / TAU * cols as f64) as usize).min(cols - 1);
            Point::new(x, y, rec[2] as f64, rec[3] as f64, col as u32, i as u32)
        })
        .collect())
}

fn le_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RangeImageHeader {
    rows: usize,
    cols: usize,
    inclinations: Vec<f64>,
}

/// Binary payload path for a range-image header: same stem, `.bin`.
pub fn range_image_data_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes the JSON header at `header` and the row-major ranges followed
/// by intensities (little-endian f32) next to it.
pub fn write_range_image(header: &Path, img: &RangeImage) -> Result<()> {
    let head = RangeImageHeader {
        rows: img.rows,
        cols: img.cols,
        inclinations: img.inclinations.clone(),
    };
    let json = serde_json::to_string_pretty(&head).map_err(|e| Error::json(header, e))?;
    fs::write(header, json).map_err(|e| Error::io(header, e))?;

    let data = range_image_data_path(header);
    let mut buf = Vec::with_capacity(img.ranges.len() * 8);
    for v in img.ranges.iter().chain(&img.intensities) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&data, buf).map_err(|e| Error::io(&data, e))
}

pub fn read_range_image(header: &Path) -> Result<RangeImage> {
    let text = fs::read_to_string(header).map_err(|e| Error::io(header, e))?;
    let head: RangeImageHeader = serde_json::from_str(&text).map_err(|e| Error::json(header, e))?;
    let data = range_image_data_path(header);
    let bytes = fs::read(&data).map_err(|e| Error::io(&data, e))?;
    let cells = head.rows * head.cols;
    if bytes.len() != cells * 8 {
        return Err(Error::Config(format!(
            "{}: expected {} bytes for a {}x{} image, found {}",
            data.display(),
            cells * 8,
            head.rows,
            head.cols,
            bytes.len()
        )));
    }
    let mut floats = le_f32s(&bytes);
    let intensities = floats.split_off(cells);
    RangeImage::new(head.rows, head.cols, floats, intensities, head.inclinations)
        .map_err(|e| Error::Config(format!("{}: {e}", header.display())))
}
