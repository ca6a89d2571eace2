//! Per-slice clustering detectors.
//!
//! The stateless detector sees one wedge at a time and splits any object
//! that crosses a wedge boundary into partial detections. The carryover
//! detector keeps clusters that touch the trailing boundary open and
//! merges them with their continuation in the next wedge.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    convex_hull, enclosing_rect_along, min_area_rect, OrientedBox, Rect2, Vec2, MIN_EXTENT,
};
use crate::scene::ObjectClass;
use crate::sensor::{slice_points, Point, Wedge};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Unique within a scan; increases with emission order.
    pub id: u64,
    pub bbox: OrientedBox,
    pub score: f64,
    pub class: ObjectClass,
    /// Slice that emitted the detection, or -1 for a full-scan pass.
    pub slice_index: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMode {
    Stateless,
    Carryover,
}

/// Nominal object dimensions used to complete footprints whose far side
/// was not observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapePriors {
    pub vehicle_min_length: f64,
    pub vehicle_length: f64,
    pub vehicle_min_width: f64,
    pub vehicle_max_width: f64,
    pub vehicle_width: f64,
    pub pedestrian_min_side: f64,
    pub pedestrian_side: f64,
}

impl Default for ShapePriors {
    fn default() -> Self {
        ShapePriors {
            vehicle_min_length: 3.5,
            vehicle_length: 4.75,
            vehicle_min_width: 1.6,
            vehicle_max_width: 2.4,
            vehicle_width: 2.0,
            pedestrian_min_side: 0.4,
            pedestrian_side: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub mode: DetectorMode,
    /// Single-link distance in the x-y plane, meters.
    pub eps: f64,
    pub min_points: usize,
    /// Arc length at a point's range within which it touches a wedge edge.
    pub boundary_band: f64,
    /// Score shape: `1 - exp(-points / tau)`.
    pub score_tau: f64,
    /// Clusters whose footprint is at most this long are pedestrians.
    pub pedestrian_max_dim: f64,
    /// Grow unobserved extents to the class priors.
    pub complete_extents: bool,
    pub priors: ShapePriors,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            mode: DetectorMode::Stateless,
            eps: 0.7,
            min_points: 5,
            boundary_band: 0.3,
            score_tau: 20.0,
            pedestrian_max_dim: 1.5,
            complete_extents: true,
            priors: ShapePriors::default(),
        }
    }
}

impl DetectorConfig {
    pub fn with_mode(mode: DetectorMode) -> Self {
        DetectorConfig {
            mode,
            ..DetectorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.boundary_band >= 0.0 && self.score_tau > 0.0) {
            return Err(Error::Config(
                "detector needs eps > 0, boundary_band >= 0, score_tau > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Wedge edges a cluster was cut by, as azimuths.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Truncation {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Truncation {
    pub const NONE: Truncation = Truncation {
        lower: None,
        upper: None,
    };

    /// Unit normals of the cut edges pointing out of the wedge.
    fn outward_normals(&self) -> impl Iterator<Item = Vec2> {
        let lower = self.lower.map(|a| Vec2::new(a.sin(), -a.cos()));
        let upper = self.upper.map(|a| Vec2::new(-a.sin(), a.cos()));
        lower.into_iter().chain(upper)
    }
}

/// A cluster waiting for its continuation in the next wedge.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenCluster {
    pub points: Vec<Point>,
    pub provisional_class: ObjectClass,
    /// Lower wedge edge the cluster was cut by, if any.
    pub lower_cut: Option<f64>,
    /// Upper edge of the wedge the cluster was last extended in.
    pub upper: f64,
}

/// Detector state carried between consecutive slices of one scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CarryState {
    pub open_clusters: Vec<OpenCluster>,
    pub last_index: Option<usize>,
    slice_count: Option<usize>,
}

impl CarryState {
    pub fn new() -> Self {
        CarryState::default()
    }
}

/// Single-link Euclidean clustering in the x-y plane. Clusters are
/// ordered by their smallest point index; indices within a cluster are
/// ascending.
pub fn cluster_points(points: &[Point], eps: f64) -> Vec<Vec<usize>> {
    let xy: Vec<Vec2> = points.iter().map(Point::xy).collect();
    cluster_xy(&xy, eps)
}

fn cluster_xy(xy: &[Vec2], eps: f64) -> Vec<Vec<usize>> {
    let cell_of = |p: Vec2| ((p.x / eps).floor() as i64, (p.y / eps).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in xy.iter().enumerate() {
        grid.entry(cell_of(*p)).or_default().push(i);
    }

    let mut sets = DisjointSets::new(xy.len());
    let eps2 = eps * eps;
    for (i, p) in xy.iter().enumerate() {
        let (cx, cy) = cell_of(*p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j > i {
                        let d = *p - xy[j];
                        if d.dot(d) <= eps2 {
                            sets.union(i, j);
                        }
                    }
                }
            }
        }
    }
    sets.groups()
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so roots are component minima
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Components ordered by minimum member, members ascending.
    fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut slot: HashMap<usize, usize> = HashMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.parent.len() {
            let root = self.find(i);
            let k = *slot.entry(root).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[k].push(i);
        }
        out
    }
}

/// Top-down rectangle around a cluster. Among hull-edge orientations whose
/// enclosing rectangle is within 25% of the minimum area, the one whose
/// edges lie closest to the points wins; this keeps L-shaped returns from
/// two visible faces aligned with the faces.
pub fn fit_footprint(xy: &[Vec2]) -> Rect2 {
    let Ok(hull) = convex_hull(xy) else {
        return min_area_rect(&Default::default());
    };
    if hull.is_degenerate() {
        return min_area_rect(&hull);
    }
    let best_area = min_area_rect(&hull).area();
    let hv = hull.vertices();
    let mut best: Option<(f64, Rect2)> = None;
    for i in 0..hv.len() {
        let edge = hv[(i + 1) % hv.len()] - hv[i];
        let rect = enclosing_rect_along(hv, edge);
        if rect.area() > best_area * 1.25 + 1e-9 {
            continue;
        }
        let cost = edge_closeness(xy, &rect);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, rect));
        }
    }
    best.map_or_else(|| min_area_rect(&hull), |(_, r)| r)
}

/// Mean distance from each point to the nearest rectangle edge.
fn edge_closeness(xy: &[Vec2], rect: &Rect2) -> f64 {
    let (hl, hw) = (rect.length / 2.0, rect.width / 2.0);
    let total: f64 = xy
        .iter()
        .map(|p| {
            let local = (*p - rect.center()).rotate(-rect.heading);
            (hl - local.x.abs()).abs().min((hw - local.y.abs()).abs())
        })
        .sum();
    total / xy.len() as f64
}

/// Class from the observed footprint size alone.
pub fn classify(points: &[Point], config: &DetectorConfig) -> ObjectClass {
    let xy: Vec<Vec2> = points.iter().map(Point::xy).collect();
    let rect = fit_footprint(&xy);
    if rect.length.max(rect.width) <= config.pedestrian_max_dim {
        ObjectClass::Pedestrian
    } else {
        ObjectClass::Vehicle
    }
}

/// Fits a scored box to a cluster, or `None` when it has fewer than
/// `min_points` points.
pub fn fit_box(
    cluster: &[Point],
    class: ObjectClass,
    config: &DetectorConfig,
    cut: Truncation,
) -> Option<Detection> {
    if cluster.len() < config.min_points.max(1) {
        return None;
    }
    let xy: Vec<Vec2> = cluster.iter().map(Point::xy).collect();
    let mut rect = fit_footprint(&xy);
    if config.complete_extents {
        rect = complete_footprint(rect, class, &config.priors, cut);
    }
    let (zmin, zmax) = cluster
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let height = (zmax - zmin).max(MIN_EXTENT);
    let bbox = rect.to_box((zmin + zmax) / 2.0, height).ok()?;
    Some(Detection {
        id: 0,
        bbox,
        score: 1.0 - (-(cluster.len() as f64) / config.score_tau).exp(),
        class,
        slice_index: -1,
    })
}

/// Grows extents that are shorter than the class allows. The hidden part
/// is added across a cut wedge edge when the axis crosses one, otherwise
/// on the side facing away from the sensor.
fn complete_footprint(rect: Rect2, class: ObjectClass, priors: &ShapePriors, cut: Truncation) -> Rect2 {
    let u1 = Vec2::from_angle(rect.heading);
    let u2 = u1.perp();
    let normals: Vec<Vec2> = cut.outward_normals().collect();
    let cut_weight = |u: Vec2| normals.iter().map(|n| u.dot(*n).abs()).fold(0.0, f64::max);
    let sight = rect.center().normalized();
    let (a, b) = (rect.length, rect.width);

    // (minimum, nominal) per axis
    let (limits_a, limits_b) = match class {
        ObjectClass::Pedestrian => {
            let l = (priors.pedestrian_min_side, priors.pedestrian_side);
            (l, l)
        }
        ObjectClass::Vehicle => {
            let length = (priors.vehicle_min_length, priors.vehicle_length);
            let width = (priors.vehicle_min_width, priors.vehicle_width);
            let length_along_u1 = if a >= priors.vehicle_max_width {
                true
            } else if !normals.is_empty() {
                cut_weight(u1) >= cut_weight(u2)
            } else {
                // the hidden depth axis carries the unseen length
                u1.dot(sight).abs() >= u2.dot(sight).abs()
            };
            if length_along_u1 {
                (length, width)
            } else {
                (width, length)
            }
        }
    };

    // an axis crossing a cut is at least nominal; growth goes across the cut,
    // or both ways when both edges cross the object
    let mut center = rect.center();
    let mut targets = [a, b];
    for (i, (u, old, (min, nominal))) in [(u1, a, limits_a), (u2, b, limits_b)].into_iter().enumerate() {
        let crossing: Vec<f64> = normals.iter().map(|n| u.dot(*n)).filter(|w| w.abs() >= 0.5).collect();
        let new = if !crossing.is_empty() {
            old.max(nominal)
        } else if old < min {
            nominal
        } else {
            old
        };
        targets[i] = new;
        if new > old {
            let sign = match crossing.as_slice() {
                [] => u.dot(sight),
                [w] => w.signum(),
                _ => 0.0,
            };
            center = center + u * (sign * (new - old) / 2.0);
        }
    }
    Rect2::from_axis_extents(center, u1, targets[0], targets[1])
}

struct Group {
    points: Vec<Point>,
    cut: Truncation,
}

/// Runs the detector on one wedge. Wedges of a scan must arrive in index
/// order with the state returned by the previous call; after the last
/// wedge the returned state is fresh.
pub fn detect_slice(
    wedge: &Wedge,
    state: CarryState,
    config: &DetectorConfig,
) -> Result<(Vec<Detection>, CarryState)> {
    let spec = wedge.spec;
    let expected = state.last_index.map_or(0, |i| i + 1);
    if spec.index != expected || state.slice_count.is_some_and(|n| n != spec.n) {
        return Err(Error::ContractViolation(format!(
            "slice {}/{} presented, expected slice {expected}",
            spec.index, spec.n
        )));
    }
    let (lo, hi) = wedge.bounds();
    let sliced = spec.n > 1;
    let band = config.boundary_band;

    let clusters: Vec<Vec<Point>> = cluster_points(&wedge.points, config.eps)
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| wedge.points[i]).collect())
        .collect();
    let touches_lo: Vec<bool> = clusters
        .iter()
        .map(|c| sliced && c.iter().any(|p| p.planar_range() * (p.azimuth - lo) <= band))
        .collect();
    let touches_hi: Vec<bool> = clusters
        .iter()
        .map(|c| sliced && c.iter().any(|p| p.planar_range() * (hi - p.azimuth) <= band))
        .collect();

    let mut emitted: Vec<Group> = Vec::new();
    let mut open: Vec<OpenCluster> = Vec::new();

    match config.mode {
        DetectorMode::Stateless => {
            for (k, points) in clusters.into_iter().enumerate() {
                emitted.push(Group {
                    points,
                    cut: Truncation {
                        lower: touches_lo[k].then_some(lo),
                        upper: touches_hi[k].then_some(hi),
                    },
                });
            }
        }
        DetectorMode::Carryover => {
            let carried = state.open_clusters;
            let nc = carried.len();
            let mut sets = DisjointSets::new(nc + clusters.len());
            for (c, open_cluster) in carried.iter().enumerate() {
                for (k, cluster) in clusters.iter().enumerate() {
                    if touches_lo[k] && within_eps_across(&open_cluster.points, cluster, lo, config.eps) {
                        sets.union(c, nc + k);
                    }
                }
            }
            for members in sets.groups() {
                let has_carried = members[0] < nc;
                let new_touch_hi = members.iter().any(|&m| m >= nc && touches_hi[m - nc]);
                let mut points = Vec::new();
                let mut lower_cut = None;
                let mut carried_upper = None;
                for &m in &members {
                    if m < nc {
                        points.extend_from_slice(&carried[m].points);
                        lower_cut = lower_cut.or(carried[m].lower_cut);
                        carried_upper = Some(carried[m].upper);
                    } else {
                        points.extend_from_slice(&clusters[m - nc]);
                        if !has_carried && touches_lo[m - nc] {
                            lower_cut = Some(lo);
                        }
                    }
                }
                points.sort_by_key(|p| p.seq);

                let only_carried = members.iter().all(|&m| m < nc);
                if new_touch_hi && !spec.is_last() {
                    let provisional_class = classify(&points, config);
                    open.push(OpenCluster {
                        points,
                        provisional_class,
                        lower_cut,
                        upper: hi,
                    });
                    continue;
                }
                let upper = if new_touch_hi {
                    Some(hi)
                } else if only_carried {
                    carried_upper
                } else {
                    None
                };
                emitted.push(Group {
                    points,
                    cut: Truncation { lower: lower_cut, upper },
                });
            }
        }
    }

    emitted.sort_by_key(|g| g.points.first().map_or(u32::MAX, |p| p.seq));
    let slice_index = if sliced { spec.index as i32 } else { -1 };
    let mut detections = Vec::with_capacity(emitted.len());
    for group in &emitted {
        let class = classify(&group.points, config);
        if let Some(mut det) = fit_box(&group.points, class, config, group.cut) {
            det.id = ((spec.index as u64) << 20) | detections.len() as u64;
            det.slice_index = slice_index;
            detections.push(det);
        }
    }

    let next = if spec.is_last() {
        CarryState::default()
    } else {
        CarryState {
            open_clusters: open,
            last_index: Some(spec.index),
            slice_count: Some(spec.n),
        }
    };
    Ok((detections, next))
}

/// Whether any carried point and any new point near the shared edge at
/// azimuth `edge` are within `eps` of each other.
fn within_eps_across(carried: &[Point], fresh: &[Point], edge: f64, eps: f64) -> bool {
    let dir = Vec2::from_angle(edge);
    let near = |p: &&Point| dir.cross(p.xy()).abs() <= eps;
    let a: Vec<Vec2> = carried.iter().filter(near).map(Point::xy).collect();
    let b: Vec<Vec2> = fresh.iter().filter(near).map(Point::xy).collect();
    let eps2 = eps * eps;
    a.iter().any(|p| {
        b.iter().any(|q| {
            let d = *p - *q;
            d.dot(d) <= eps2
        })
    })
}

/// Runs a whole slice sequence for one scan and concatenates detections.
pub fn detect_scan(points: &[Point], n: usize, config: &DetectorConfig) -> Result<Vec<Vec<Detection>>> {
    let mut state = CarryState::new();
    let mut per_slice = Vec::with_capacity(n);
    for wedge in slice_points(points, n)? {
        let (dets, next) = detect_slice(&wedge, state, config)?;
        per_slice.push(dets);
        state = next;
    }
    Ok(per_slice)
}

/// Full-scan baseline: the single-slice pipeline.
pub fn detect_full(points: &[Point], config: &DetectorConfig) -> Vec<Detection> {
    let wedge = Wedge {
        spec: crate::sensor::SliceSpec { n: 1, index: 0 },
        points: points.to_vec(),
    };
    detect_slice(&wedge, CarryState::new(), config)
        .map(|(dets, _)| dets)
        .expect("a fresh state accepts slice 0 of 1")
}

#[derive(Serialize)]
struct DetectionRecord<'a> {
    scan_id: &'a str,
    slice: i32,
    class: ObjectClass,
    score: f64,
    cx: f64,
    cy: f64,
    cz: f64,
    l: f64,
    w: f64,
    h: f64,
    heading: f64,
}

/// One JSON object per line.
pub fn write_detections_jsonl(path: &Path, scan_id: &str, detections: &[Detection]) -> Result<()> {
    let mut out = Vec::new();
    for d in detections {
        let b = d.bbox;
        let rec = DetectionRecord {
            scan_id,
            slice: d.slice_index,
            class: d.class,
            score: d.score,
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            l: b.length,
            w: b.width,
            h: b.height,
            heading: b.heading,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
