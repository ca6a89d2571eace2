//! Experiment variants, benchmark construction and resumable sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{detect_slice, CarryState, Detection, DetectorConfig, DetectorMode};
use crate::error::{Error, Result};
use crate::eval::{self, evaluate, match_detections, EvalConfig, EvalReport, MatchResult};
use crate::exec::Execution;
use crate::latency::{expected_latency, latency_report, peak_flops_fraction, worst_case_latency, LatencyModel, LatencyReport};
use crate::nms::{global_nms, stateful_nms, NmsConfig, NmsState};
use crate::scene::{generate_scene, simulate_scan_with, LidarParams, ObjectClass, ObjectTruth, Scene, SceneConfig};
use crate::sensor::{range_image_to_points, slice_points, Point, RangeImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "localized")]
    Localized,
    #[serde(rename = "localized+statefulNMS")]
    StatefulNms,
    #[serde(rename = "localized+statefulNMS+carry")]
    StatefulNmsCarry,
    /// Per-slice detection with NMS over the whole scan; a non-streaming
    /// reference for stateful NMS.
    #[serde(rename = "localized+globalNMS")]
    GlobalNms,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Baseline,
        VariantKind::Localized,
        VariantKind::StatefulNms,
        VariantKind::StatefulNmsCarry,
        VariantKind::GlobalNms,
    ];

    pub const STREAMING: [VariantKind; 3] = [
        VariantKind::Localized,
        VariantKind::StatefulNms,
        VariantKind::StatefulNmsCarry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Baseline => "baseline",
            VariantKind::Localized => "localized",
            VariantKind::StatefulNms => "localized+statefulNMS",
            VariantKind::StatefulNmsCarry => "localized+statefulNMS+carry",
            VariantKind::GlobalNms => "localized+globalNMS",
        }
    }

    fn all() -> [VariantKind; 5] {
        [
            VariantKind::Baseline,
            VariantKind::Localized,
            VariantKind::StatefulNms,
            VariantKind::StatefulNmsCarry,
            VariantKind::GlobalNms,
        ]
    }

    pub fn carries_state(self) -> bool {
        self == VariantKind::StatefulNmsCarry
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = VariantKind::all().iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Suppression {
    PerSlice,
    Stateful,
    Global,
}

/// A fully specified pipeline: detector, slicing and suppression.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub kind: VariantKind,
    pub n: usize,
    pub nms: NmsConfig,
    pub detector: DetectorConfig,
}

impl Variant {
    /// Baseline is forced to one slice; the localized variant keeps no
    /// NMS memory; stateful variants use `nms.window_k`.
    pub fn new(kind: VariantKind, n: usize, nms: &NmsConfig, detector: &DetectorConfig) -> Result<Variant> {
        if n == 0 {
            return Err(Error::InvalidInput("slice count must be >= 1".into()));
        }
        nms.validate()?;
        detector.validate()?;
        let mut nms = nms.clone();
        let mut detector = detector.clone();
        detector.mode = if kind.carries_state() {
            DetectorMode::Carryover
        } else {
            DetectorMode::Stateless
        };
        let n = match kind {
            VariantKind::Baseline => 1,
            _ => n,
        };
        if matches!(kind, VariantKind::Baseline | VariantKind::Localized | VariantKind::GlobalNms) {
            nms.window_k = 0;
        }
        Ok(Variant { kind, n, nms, detector })
    }

    fn suppression(&self) -> Suppression {
        match self.kind {
            VariantKind::Baseline | VariantKind::GlobalNms => Suppression::Global,
            VariantKind::Localized => Suppression::PerSlice,
            VariantKind::StatefulNms | VariantKind::StatefulNmsCarry => Suppression::Stateful,
        }
    }
}

/// Slices the cloud, runs the detector slice by slice with its state and
/// applies the variant's suppression in slice order.
pub fn detect_variant(points: &[Point], variant: &Variant) -> Result<Vec<Detection>> {
    let mut det_state = CarryState::new();
    let mut nms_state = NmsState::new();
    let mut pending = Vec::new();
    let mut out = Vec::new();
    for wedge in slice_points(points, variant.n)? {
        let index = wedge.spec.index;
        let (dets, next) = detect_slice(&wedge, det_state, &variant.detector)?;
        det_state = next;
        match variant.suppression() {
            Suppression::Global => pending.extend(dets),
            Suppression::PerSlice | Suppression::Stateful => {
                let (kept, next) = stateful_nms(index, &dets, nms_state, &variant.nms)?;
                nms_state = next;
                out.extend(kept);
            }
        }
    }
    if variant.suppression() == Suppression::Global {
        out = global_nms(&pending, &variant.nms);
    }
    Ok(out)
}

/// Runs a variant on one scan and evaluates it against the scene.
pub fn run_variant(
    scan: &RangeImage,
    truths: &[ObjectTruth],
    variant: &Variant,
    eval_config: &EvalConfig,
) -> Result<(Vec<Detection>, EvalReport)> {
    let points = range_image_to_points(scan);
    let dets = detect_variant(&points, variant)?;
    let matched = match_detections(&dets, truths, eval_config);
    let report = evaluate(&[matched], &[truths.to_vec()])?;
    Ok((dets, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub lidar: LidarParams,
    pub slices: Vec<usize>,
    pub variants: Vec<VariantKind>,
    pub seeds: Vec<u64>,
    pub scenes_per_seed: usize,
    pub nms: NmsConfig,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
    pub latency: LatencyModel,
    /// Used by the command line when `--out` is not given.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneConfig::default(),
            lidar: LidarParams::default(),
            slices: vec![4, 8, 16, 32, 64],
            variants: vec![
                VariantKind::Baseline,
                VariantKind::Localized,
                VariantKind::StatefulNms,
                VariantKind::StatefulNmsCarry,
            ],
            seeds: vec![1, 2, 3, 4, 5],
            scenes_per_seed: 50,
            nms: NmsConfig::default(),
            detector: DetectorConfig::default(),
            eval: EvalConfig::default(),
            latency: LatencyModel::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.slices.is_empty() || self.slices.contains(&0) {
            return Err(Error::Config("slice counts must be non-empty and >= 1".into()));
        }
        if self.variants.is_empty() || self.scenes_per_seed == 0 {
            return Err(Error::Config("need at least one variant and one scene".into()));
        }
        self.scene.validate()?;
        self.lidar.validate()?;
        self.nms.validate()?;
        self.detector.validate()?;
        self.latency.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    /// (variant, n) pairs of the sweep; the baseline appears once at n = 1.
    pub fn variant_grid(&self) -> Vec<(VariantKind, usize)> {
        let mut grid = Vec::new();
        for &kind in &self.variants {
            if kind == VariantKind::Baseline {
                grid.push((kind, 1));
            } else {
                grid.extend(self.slices.iter().map(|&n| (kind, n)));
            }
        }
        grid.dedup();
        grid
    }
}

/// Scenes and scans of one seed.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub seed: u64,
    pub scenes: Vec<Scene>,
    pub scans: Vec<RangeImage>,
}

impl Benchmark {
    pub fn truths(&self) -> Vec<Vec<ObjectTruth>> {
        self.scenes.iter().map(|s| s.objects.clone()).collect()
    }

    pub fn points(&self) -> Vec<Vec<Point>> {
        self.scans.iter().map(range_image_to_points).collect()
    }
}

/// Scene and scan-noise seeds for each scene of a benchmark seed.
pub fn scene_seeds(seed: u64, count: usize) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (rng.random(), rng.random())).collect()
}

pub fn build_benchmark(
    scene: &SceneConfig,
    lidar: &LidarParams,
    seed: u64,
    count: usize,
    exec: Execution,
) -> Result<Benchmark> {
    let seeds = scene_seeds(seed, count);
    let built: Vec<Result<(Scene, RangeImage)>> = exec.map_slice(&seeds, |&(scene_seed, scan_seed)| {
        let s = generate_scene(scene, scene_seed)?;
        let img = simulate_scan_with(&s, lidar, scan_seed, Execution::Sequential)?;
        Ok((s, img))
    });
    let mut scenes = Vec::with_capacity(count);
    let mut scans = Vec::with_capacity(count);
    for r in built {
        let (s, img) = r?;
        scenes.push(s);
        scans.push(img);
    }
    Ok(Benchmark { seed, scenes, scans })
}

/// Runs a variant over every scan of a benchmark and pools the matches.
pub fn evaluate_variant(
    points: &[Vec<Point>],
    truths: &[Vec<ObjectTruth>],
    variant: &Variant,
    eval_config: &EvalConfig,
    exec: Execution,
) -> Result<EvalReport> {
    let matched: Vec<Result<MatchResult>> = exec.map_range(points.len(), |i| {
        let dets = detect_variant(&points[i], variant)?;
        Ok(match_detections(&dets, &truths[i], eval_config))
    });
    let matched: Vec<MatchResult> = matched.into_iter().collect::<Result<_>>()?;
    evaluate(&matched, truths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub variant: VariantKind,
    pub n: usize,
    pub seed: u64,
    pub window_k: usize,
    pub worst_case_ms: f64,
    pub expected_ms: f64,
    pub flops_fraction: f64,
    pub report: Option<EvalReport>,
    pub failure: Option<String>,
}

impl CellRecord {
    fn file_name(variant: VariantKind, n: usize, seed: u64) -> String {
        format!("{}_n{n}_seed{seed}.json", variant.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: VariantKind,
    pub n: usize,
    pub seeds: usize,
    pub mean_map: Option<f64>,
    pub mean_ap: BTreeMap<ObjectClass, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<Aggregate>,
    pub latency: LatencyReport,
}

impl ExperimentReport {
    pub fn cell(&self, variant: VariantKind, n: usize, seed: u64) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.n == n && c.seed == seed)
    }

    pub fn aggregate(&self, variant: VariantKind, n: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.variant == variant && a.n == n)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn cell_record(
    config: &ExperimentConfig,
    variant: VariantKind,
    n: usize,
    seed: u64,
    outcome: Result<EvalReport>,
) -> Result<CellRecord> {
    let v = Variant::new(variant, n, &config.nms, &config.detector)?;
    let (report, failure) = match outcome {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(CellRecord {
        variant,
        n: v.n,
        seed,
        window_k: v.nms.window_k,
        worst_case_ms: worst_case_latency(&config.latency, v.n)?,
        expected_ms: expected_latency(&config.latency, v.n)?,
        flops_fraction: peak_flops_fraction(v.n, variant.carries_state(), &config.latency)?,
        report,
        failure,
    })
}

/// Runs the full (variant, n, seed) grid, writing one JSON file per cell
/// under `out/cells` so an interrupted sweep resumes where it stopped,
/// then the combined `report.csv`, `report.json`, `bins.csv` and
/// `latency.csv`.
pub fn sweep(config: &ExperimentConfig, out: &Path, exec: Execution) -> Result<ExperimentReport> {
    config.validate()?;
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;

    let config_path = out.join("config.json");
    let config_json = serde_json::to_string_pretty(config).map_err(|e| Error::json(&config_path, e))?;
    match fs::read_to_string(&config_path) {
        Ok(existing) if existing != config_json => {
            return Err(Error::Config(format!(
                "{} holds a sweep with a different config",
                out.display()
            )));
        }
        Ok(_) => {}
        Err(_) => write_atomic(&config_path, config_json.as_bytes())?,
    }

    let grid = config.variant_grid();
    for &seed in &config.seeds {
        let pending: Vec<(VariantKind, usize)> = grid
            .iter()
            .copied()
            .filter(|&(v, n)| !cells_dir.join(CellRecord::file_name(v, n, seed)).exists())
            .collect();
        if pending.is_empty() {
            continue;
        }
        let bench = build_benchmark(&config.scene, &config.lidar, seed, config.scenes_per_seed, exec);
        let data = bench.map(|b| (b.points(), b.truths()));
        for (variant, n) in pending {
            let outcome = match &data {
                Ok((points, truths)) => Variant::new(variant, n, &config.nms, &config.detector)
                    .and_then(|v| evaluate_variant(points, truths, &v, &config.eval, exec)),
                Err(e) => Err(Error::Config(format!("benchmark for seed {seed} failed: {e}"))),
            };
            let record = cell_record(config, variant, n, seed, outcome)?;
            let path = cells_dir.join(CellRecord::file_name(variant, n, seed));
            let json = serde_json::to_vec_pretty(&record).map_err(|e| Error::json(&path, e))?;
            write_atomic(&path, &json)?;
        }
    }

    let mut cells = Vec::new();
    for &seed in &config.seeds {
        for &(variant, n) in &grid {
            let path = cells_dir.join(CellRecord::file_name(variant, n, seed));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            cells.push(serde_json::from_str::<CellRecord>(&text).map_err(|e| Error::json(&path, e))?);
        }
    }
    let mut ns: Vec<usize> = grid.iter().map(|g| g.1).collect();
    ns.sort();
    ns.dedup();
    let report = ExperimentReport {
        aggregates: aggregate(&grid, &cells),
        latency: latency_report(&config.latency, &ns)?,
        cells,
    };
    write_outputs(out, &report)?;
    Ok(report)
}

fn aggregate(grid: &[(VariantKind, usize)], cells: &[CellRecord]) -> Vec<Aggregate> {
    grid.iter()
        .map(|&(variant, n)| {
            let reports: Vec<&EvalReport> = cells
                .iter()
                .filter(|c| c.variant == variant && c.n == n)
                .filter_map(|c| c.report.as_ref())
                .collect();
            let maps: Vec<f64> = reports.iter().filter_map(|r| r.map).collect();
            let mut mean_ap = BTreeMap::new();
            for class in ObjectClass::ALL {
                let aps: Vec<f64> = reports.iter().filter_map(|r| r.class(class).and_then(|c| c.ap)).collect();
                if !aps.is_empty() {
                    mean_ap.insert(class, aps.iter().sum::<f64>() / aps.len() as f64);
                }
            }
            Aggregate {
                variant,
                n,
                seeds: reports.len(),
                mean_map: (!maps.is_empty()).then(|| maps.iter().sum::<f64>() / maps.len() as f64),
                mean_ap,
            }
        })
        .collect()
}

pub const REPORT_CSV_HEADER: &str = "variant,n,seed,window_k,status,map,ap_vehicle,ap_pedestrian,tp,fp,fn,worst_case_ms,expected_ms,flops_fraction";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

pub fn report_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for c in &report.cells {
        let r = c.report.as_ref();
        let ap = |class| r.and_then(|r| r.class(class)).and_then(|c| c.ap);
        let total = |f: fn(&eval::ClassReport) -> usize| {
            r.map_or_else(|| "NA".into(), |r| r.classes.iter().map(f).sum::<usize>().to_string())
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            c.variant,
            c.n,
            c.seed,
            c.window_k,
            if c.failure.is_some() { "failed" } else { "ok" },
            fmt_opt(r.and_then(|r| r.map)),
            fmt_opt(ap(ObjectClass::Vehicle)),
            fmt_opt(ap(ObjectClass::Pedestrian)),
            total(|c| c.tp),
            total(|c| c.fp),
            total(|c| c.fn_),
            c.worst_case_ms,
            c.expected_ms,
            c.flops_fraction,
        ));
    }
    out
}

fn write_outputs(out: &Path, report: &ExperimentReport) -> Result<()> {
    write_atomic(&out.join("report.csv"), report_csv(report).as_bytes())?;
    let json_path = out.join("report.json");
    let json = serde_json::to_vec_pretty(report).map_err(|e| Error::json(&json_path, e))?;
    write_atomic(&json_path, &json)?;

    let mut bins = format!("seed,{}\n", eval::BIN_CSV_HEADER);
    for c in &report.cells {
        if let Some(r) = &c.report {
            for row in eval::bin_csv_rows(c.variant.name(), c.n, r) {
                bins.push_str(&format!("{},{row}\n", c.seed));
            }
        }
    }
    write_atomic(&out.join("bins.csv"), bins.as_bytes())?;
    write_atomic(&out.join("latency.csv"), report.latency.to_csv().as_bytes())
}
