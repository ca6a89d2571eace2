//! Detect on one simulated scan with each variant at 16 slices.

use lidar_stream::error::Result;
use lidar_stream::pipeline::{run_variant, ExperimentConfig, Variant, VariantKind};
use lidar_stream::scene::{generate_scene, simulate_scan};

fn main() -> Result<()> {
    let config = ExperimentConfig::default();
    let scene = generate_scene(&config.scene, 42)?;
    let scan = simulate_scan(&scene, &config.lidar, 42)?;
    for kind in VariantKind::ALL {
        let variant = Variant::new(kind, 16, &config.nms, &config.detector)?;
        let (dets, report) = run_variant(&scan, &scene.objects, &variant, &config.eval)?;
        println!("{:30} n={:2} detections={:3} mAP={:?}", kind.name(), variant.n, dets.len(), report.map);
    }
    Ok(())
}
