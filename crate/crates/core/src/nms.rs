//! Greedy non-maximum suppression: per slice, over a whole scan, and
//! streaming with a memory of the previous `window_k` slices.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, iou_bev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Detection, b: &Detection) -> f64 {
        match self {
            IouKind::Bev => iou_bev(&a.bbox, &b.bbox),
            IouKind::ThreeD => iou_3d(&a.bbox, &b.bbox),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    pub window_k: usize,
    pub iou_kind: IouKind,
    /// Let detections of one class suppress another.
    pub cross_class: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            iou_threshold: 0.5,
            window_k: 1,
            iou_kind: IouKind::Bev,
            cross_class: false,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "NMS IoU threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }

    fn suppresses(&self, kept: &Detection, candidate: &Detection) -> bool {
        (self.cross_class || kept.class == candidate.class)
            && self.iou_kind.iou(kept, candidate) > self.iou_threshold
    }
}

/// Kept detections of the most recent slices of one scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NmsState {
    buffer: VecDeque<(usize, Vec<Detection>)>,
    last_slice: Option<usize>,
}

impl NmsState {
    pub fn new() -> Self {
        NmsState::default()
    }

    /// Stored slices, oldest first.
    pub fn slices(&self) -> impl Iterator<Item = (usize, &[Detection])> {
        self.buffer.iter().map(|(i, d)| (*i, d.as_slice()))
    }
}

/// Descending score, ties by ascending id.
fn priority(a: &Detection, b: &Detection) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

fn greedy_seeded(seed: &[&Detection], dets: &[Detection], config: &NmsConfig) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| priority(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        let blocked = seed.iter().copied().chain(kept.iter()).any(|k| config.suppresses(k, d));
        if !blocked {
            kept.push(*d);
        }
    }
    kept
}

/// Greedy NMS; the kept list is in processing order.
pub fn nms_greedy(dets: &[Detection], config: &NmsConfig) -> Vec<Detection> {
    greedy_seeded(&[], dets, config)
}

/// Streaming NMS for slice `slice` of a scan. Detections kept in the
/// previous `window_k` slices act as already-kept boxes, so a current
/// detection survives only if nothing stored or kept before it in this
/// slice overlaps it. Slices must be presented in increasing order; start
/// each scan with a fresh state.
pub fn stateful_nms(
    slice: usize,
    slice_dets: &[Detection],
    mut state: NmsState,
    config: &NmsConfig,
) -> Result<(Vec<Detection>, NmsState)> {
    if state.last_slice.is_some_and(|last| slice <= last) {
        return Err(Error::ContractViolation(format!(
            "NMS slice {slice} presented after slice {}",
            state.last_slice.unwrap_or_default()
        )));
    }
    let seed: Vec<&Detection> = state.buffer.iter().flat_map(|(_, d)| d.iter()).collect();
    let kept = greedy_seeded(&seed, slice_dets, config);

    state.last_slice = Some(slice);
    if config.window_k > 0 {
        state.buffer.push_back((slice, kept.clone()));
        while state.buffer.len() > config.window_k {
            state.buffer.pop_front();
        }
    }
    Ok((kept, state))
}

/// Greedy NMS over the concatenation of every slice of a scan.
pub fn global_nms(all_dets: &[Detection], config: &NmsConfig) -> Vec<Detection> {
    nms_greedy(all_dets, config)
}
