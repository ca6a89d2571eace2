//! Synthetic scenes and a ray-cast LiDAR scan simulator.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{iou_bev, normalize_angle, wrap_two_pi, OrientedBox, Vec2};
use crate::sensor::{column_azimuth, RangeImage};

pub const PLACEMENT_ATTEMPTS: usize = 1000;
/// Closest any footprint may come to the sensor.
const ORIGIN_CLEARANCE: f64 = 1.0;
const MIN_NOISY_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Vehicle, ObjectClass::Pedestrian];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TruthRecord", try_from = "TruthRecord")]
pub struct ObjectTruth {
    pub id: u64,
    pub class: ObjectClass,
    pub bbox: OrientedBox,
}

/// Flat on-disk form of an [`ObjectTruth`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct TruthRecord {
    id: u64,
    class: ObjectClass,
    cx: f64,
    cy: f64,
    cz: f64,
    length: f64,
    width: f64,
    height: f64,
    heading: f64,
}

impl From<ObjectTruth> for TruthRecord {
    fn from(t: ObjectTruth) -> Self {
        let b = t.bbox;
        TruthRecord {
            id: t.id,
            class: t.class,
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            length: b.length,
            width: b.width,
            height: b.height,
            heading: b.heading,
        }
    }
}

impl TryFrom<TruthRecord> for ObjectTruth {
    type Error = Error;

    fn try_from(r: TruthRecord) -> Result<Self> {
        Ok(ObjectTruth {
            id: r.id,
            class: r.class,
            bbox: OrientedBox::new(r.cx, r.cy, r.cz, r.length, r.width, r.height, r.heading)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<ObjectTruth>,
    pub seed: u64,
    /// Maximum center range, meters.
    pub bounds: f64,
}

/// Object counts and placement ranges for [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub vehicles: usize,
    pub pedestrians: usize,
    /// Center range interval for vehicles, meters.
    pub vehicle_range: [f64; 2],
    pub pedestrian_range: [f64; 2],
    pub max_range: f64,
    /// Minimum clearance between footprints.
    pub min_gap: f64,
    /// Height of the sensor above the ground plane objects stand on.
    pub sensor_height: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            vehicles: 20,
            pedestrians: 20,
            vehicle_range: [15.0, 50.0],
            pedestrian_range: [6.0, 40.0],
            max_range: 60.0,
            min_gap: 1.0,
            sensor_height: 1.73,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("vehicle_range", self.vehicle_range),
            ("pedestrian_range", self.pedestrian_range),
        ] {
            if !(lo >= 2.0 && hi >= lo && hi <= self.max_range) {
                return Err(Error::Config(format!(
                    "{name} [{lo}, {hi}] must satisfy 2 <= lo <= hi <= max_range ({})",
                    self.max_range
                )));
            }
        }
        if !(self.min_gap >= 0.0 && self.sensor_height.is_finite()) {
            return Err(Error::Config("min_gap must be >= 0".into()));
        }
        Ok(())
    }
}

/// Vehicle footprint limits (length, width), meters.
pub const VEHICLE_LENGTH: [f64; 2] = [3.5, 6.0];
pub const VEHICLE_WIDTH: [f64; 2] = [1.6, 2.4];
pub const VEHICLE_HEIGHT: [f64; 2] = [1.4, 2.0];
pub const PEDESTRIAN_SIDE: [f64; 2] = [0.4, 1.2];
pub const PEDESTRIAN_HEIGHT: [f64; 2] = [1.5, 1.9];

/// Rejection-samples a non-overlapping scene. Deterministic per seed.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<ObjectTruth> = Vec::with_capacity(config.vehicles + config.pedestrians);
    let classes = std::iter::repeat_n(ObjectClass::Vehicle, config.vehicles)
        .chain(std::iter::repeat_n(ObjectClass::Pedestrian, config.pedestrians));
    let margin = config.min_gap / 2.0;

    for (index, class) in classes.enumerate() {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let candidate = sample_box(&mut rng, class, config);
            let clear_of_origin = !candidate.contains_xy(Vec2::default(), ORIGIN_CLEARANCE);
            let grown = candidate.inflated(margin);
            let free = objects
                .iter()
                .all(|o| iou_bev(&o.bbox.inflated(margin), &grown) == 0.0);
            if clear_of_origin && free {
                placed = Some(candidate);
                break;
            }
        }
        let bbox = placed.ok_or(Error::Placement {
            index,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        objects.push(ObjectTruth {
            id: index as u64,
            class,
            bbox,
        });
    }
    Ok(Scene {
        objects,
        seed,
        bounds: config.max_range,
    })
}

fn sample_box(rng: &mut ChaCha8Rng, class: ObjectClass, config: &SceneConfig) -> OrientedBox {
    let [rlo, rhi] = match class {
        ObjectClass::Vehicle => config.vehicle_range,
        ObjectClass::Pedestrian => config.pedestrian_range,
    };
    let range = if rhi > rlo { rng.random_range(rlo..rhi) } else { rlo };
    let bearing = rng.random_range(0.0..TAU);
    let heading = rng.random_range(-PI..PI);
    let (length, width, height) = match class {
        ObjectClass::Vehicle => (
            rng.random_range(VEHICLE_LENGTH[0]..VEHICLE_LENGTH[1]),
            rng.random_range(VEHICLE_WIDTH[0]..VEHICLE_WIDTH[1]),
            rng.random_range(VEHICLE_HEIGHT[0]..VEHICLE_HEIGHT[1]),
        ),
        ObjectClass::Pedestrian => {
            let side = rng.random_range(PEDESTRIAN_SIDE[0]..PEDESTRIAN_SIDE[1]);
            let other = rng.random_range(PEDESTRIAN_SIDE[0]..PEDESTRIAN_SIDE[1]);
            (
                side.max(other),
                side.min(other),
                rng.random_range(PEDESTRIAN_HEIGHT[0]..PEDESTRIAN_HEIGHT[1]),
            )
        }
    };
    let c = Vec2::from_angle(bearing) * range;
    OrientedBox {
        cx: c.x,
        cy: c.y,
        cz: -config.sensor_height + height / 2.0,
        length,
        width,
        height,
        heading: normalize_angle(heading),
    }
}

/// Sensor geometry and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub rows: usize,
    pub cols: usize,
    /// Lowest and highest laser elevation, radians.
    pub inclination_min: f64,
    pub inclination_max: f64,
    pub max_range: f64,
    pub range_noise_sigma: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        LidarParams {
            rows: 32,
            cols: 1024,
            inclination_min: (-15.0f64).to_radians(),
            inclination_max: 5.0f64.to_radians(),
            max_range: 75.0,
            range_noise_sigma: 0.02,
        }
    }
}

impl LidarParams {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 1 || self.cols < 4 {
            return Err(Error::Config(format!(
                "lidar needs rows >= 1 and cols >= 4, got {} x {}",
                self.rows, self.cols
            )));
        }
        if !(self.max_range > 0.0 && self.range_noise_sigma >= 0.0) {
            return Err(Error::Config("lidar needs max_range > 0 and sigma >= 0".into()));
        }
        if !(self.inclination_min <= self.inclination_max
            && self.inclination_max.abs() < PI / 2.0
            && self.inclination_min.abs() < PI / 2.0)
        {
            return Err(Error::Config("lidar inclinations must lie in (-90, 90) degrees".into()));
        }
        Ok(())
    }

    /// Laser elevations, evenly spaced from `inclination_min` upwards.
    pub fn inclinations(&self) -> Vec<f64> {
        if self.rows == 1 {
            return vec![(self.inclination_min + self.inclination_max) / 2.0];
        }
        let step = (self.inclination_max - self.inclination_min) / (self.rows - 1) as f64;
        (0..self.rows)
            .map(|i| self.inclination_min + step * i as f64)
            .collect()
    }
}

/// Ray unit direction for an elevation and azimuth.
pub fn ray_direction(inclination: f64, azimuth: f64) -> [f64; 3] {
    let (si, ci) = inclination.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    [ci * ca, ci * sa, si]
}

/// Distance along a ray from the origin to the first surface of a box,
/// by the slab method in the box frame.
pub fn ray_box_distance(dir: [f64; 3], b: &OrientedBox) -> Option<f64> {
    let (s, c) = b.heading.sin_cos();
    // rotate origin and direction into the box frame
    let o = [-b.cx, -b.cy, -b.cz];
    let origin = [c * o[0] + s * o[1], -s * o[0] + c * o[1], o[2]];
    let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let half = [b.length / 2.0, b.width / 2.0, b.height / 2.0];

    let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if origin[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let t1 = (-half[axis] - origin[axis]) / d[axis];
        let t2 = (half[axis] - origin[axis]) / d[axis];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    if t_near <= t_far && t_near >= 0.0 {
        Some(t_near)
    } else {
        None
    }
}

struct CastTarget {
    bbox: OrientedBox,
    /// Azimuth interval covered by the footprint: start and width.
    az_start: f64,
    az_width: f64,
}

impl CastTarget {
    fn new(bbox: OrientedBox) -> Self {
        let (az_start, az_width) = azimuth_cover(&bbox.corners());
        CastTarget {
            bbox,
            az_start,
            az_width,
        }
    }

    fn may_hit(&self, azimuth: f64) -> bool {
        // half a degree of slack around the corner interval
        let slack = 0.5f64.to_radians();
        wrap_two_pi(azimuth - self.az_start + slack) <= self.az_width + 2.0 * slack
    }
}

/// Smallest azimuth interval containing all points: start angle in
/// `[0, 2π)` and width. Assumes the points do not surround the origin.
fn azimuth_cover(points: &[Vec2]) -> (f64, f64) {
    let centroid = points.iter().fold(Vec2::default(), |a, &p| a + p) * (1.0 / points.len() as f64);
    let reference = centroid.angle();
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for p in points {
        let rel = normalize_angle(p.angle() - reference);
        lo = lo.min(rel);
        hi = hi.max(rel);
    }
    (wrap_two_pi(reference + lo), hi - lo)
}

/// Ray-casts every (laser, azimuth) cell against the scene. Each row
/// draws its noise from its own stream, so the image does not depend on
/// the execution strategy.
pub fn simulate_scan(scene: &Scene, params: &LidarParams, seed: u64) -> Result<RangeImage> {
    simulate_scan_with(scene, params, seed, Execution::default())
}

pub fn simulate_scan_with(
    scene: &Scene,
    params: &LidarParams,
    seed: u64,
    exec: Execution,
) -> Result<RangeImage> {
    params.validate()?;
    let inclinations = params.inclinations();
    let targets: Vec<CastTarget> = scene.objects.iter().map(|o| CastTarget::new(o.bbox)).collect();
    let noise = (params.range_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, params.range_noise_sigma).expect("sigma checked"));
    let cols = params.cols;

    let rows: Vec<(Vec<f32>, Vec<f32>)> = exec.map_range(params.rows, |row| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(row as u64);
        let mut ranges = vec![0.0f32; cols];
        let mut intensities = vec![0.0f32; cols];
        for col in 0..cols {
            let az = column_azimuth(col, cols);
            let dir = ray_direction(inclinations[row], az);
            let hit = targets
                .iter()
                .filter(|t| t.may_hit(az))
                .filter_map(|t| ray_box_distance(dir, &t.bbox))
                .fold(f64::INFINITY, f64::min);
            if hit < params.max_range {
                let jitter = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                let r = (hit + jitter).max(MIN_NOISY_RANGE);
                ranges[col] = r as f32;
                intensities[col] = (0.2 + 0.8 * (-r / 30.0).exp()) as f32;
            }
        }
        (ranges, intensities)
    });

    let mut ranges = Vec::with_capacity(params.rows * cols);
    let mut intensities = Vec::with_capacity(params.rows * cols);
    for (r, i) in rows {
        ranges.extend(r);
        intensities.extend(i);
    }
    RangeImage::new(params.rows, cols, ranges, intensities, inclinations)
}

/// Angular width, in degrees, of the smallest azimuth interval holding all
/// four footprint corners.
pub fn subtended_angle(obj: &ObjectTruth) -> Result<f64> {
    if obj.bbox.center_xy().norm() < 1e-9 {
        return Err(Error::InvalidInput(format!(
            "object {} is centered on the sensor",
            obj.id
        )));
    }
    let (_, width) = azimuth_cover(&obj.bbox.corners());
    Ok(width.to_degrees())
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    let json = serde_json::to_string_pretty(&scene.objects).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_truths(path: &Path) -> Result<Vec<ObjectTruth>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
