//! Instance matching: back-project map instances, build masks, and
//! resolve frame-local instance ids against global ids by IoU.

use std::collections::{BTreeMap, HashSet};

use nalgebra::Vector3;

use crate::frame::{LocalInstanceId, PanopticFrame, PanopticLabel2D};
use crate::geometry::{unproject, Intrinsics, Pixel, Pose};
use crate::map::{PanopticMap, VoxelIndex};
use crate::params::{MapParams, ParamError};
use crate::propagation::is_thing;
use crate::raster::{BitMask, Raster};
use crate::renderer::vtou;

/// Per-pixel forward-mapping result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CachedPixel {
    pub index: VoxelIndex,
    pub world: Vector3<f64>,
    pub depth: f64,
}

/// utov results for one frame: the voxel behind every valid-depth
/// pixel plus the distinct set of touched voxels. Built exactly once
/// per frame.
#[derive(Debug, Clone)]
pub struct FrameVoxelCache {
    pixels: Raster<Option<CachedPixel>>,
    touched: Vec<VoxelIndex>,
}

impl FrameVoxelCache {
    pub fn pixel(&self, u: u32, v: u32) -> Option<&CachedPixel> {
        self.pixels.get(u, v).as_ref()
    }

    /// Distinct voxels touched by the frame, in pixel-scan discovery
    /// order.
    pub fn touched(&self) -> &[VoxelIndex] {
        &self.touched
    }

    pub fn len_pixels(&self) -> usize {
        self.pixels.data().iter().filter(|p| p.is_some()).count()
    }
}

/// utov for every pixel: unproject valid depths up to `max_depth`,
/// allocate the voxel on first touch, and record the mapping.
pub fn forward_map(frame: &PanopticFrame, map: &mut PanopticMap, max_depth: f64) -> FrameVoxelCache {
    let mut pixels = Raster::filled(frame.width(), frame.height(), None);
    let mut touched = Vec::new();
    let mut seen = HashSet::new();
    for v in 0..frame.height() {
        for u in 0..frame.width() {
            let Some(depth) = frame.depth_at(u, v) else {
                continue;
            };
            if depth > max_depth {
                continue;
            }
            let Some(world) = unproject(Pixel::new(u, v), depth, &frame.intr, &frame.pose) else {
                continue;
            };
            let Ok(index) = map.voxel_index(&world) else {
                continue;
            };
            map.voxel_or_insert(index);
            if seen.insert(index) {
                touched.push(index);
            }
            pixels.set(u, v, Some(CachedPixel { index, world, depth }));
        }
    }
    FrameVoxelCache { pixels, touched }
}

/// Back-projected mask of one map instance.
#[derive(Debug, Clone)]
pub struct InstanceMask {
    pub global_id: u64,
    pub mask: BitMask,
}

/// Build the back-projected mask of every relevant map instance over
/// the touched voxels: thing voxels contribute their footprint to each
/// instance inside their top-mass share. Masks of distinct instances
/// may overlap.
pub fn build_masks(
    map: &PanopticMap,
    cache: &FrameVoxelCache,
    intr: &Intrinsics,
    pose: &Pose,
    params: &MapParams,
) -> Vec<InstanceMask> {
    let mut masks: BTreeMap<u64, BitMask> = BTreeMap::new();
    for &index in cache.touched() {
        let Some(voxel) = map.voxel(index) else {
            continue;
        };
        if !is_thing(voxel, params.theta_st) {
            continue;
        }
        let ids = voxel.inst.top_ids(params.theta_b);
        if ids.is_empty() {
            continue;
        }
        let footprint = vtou(voxel, intr, pose, params.k_sigma);
        if footprint.is_empty() {
            continue;
        }
        for id in ids {
            let mask = masks
                .entry(id)
                .or_insert_with(|| BitMask::new(intr.width, intr.height));
            for p in &footprint {
                mask.set(p.u, p.v);
            }
        }
    }
    masks
        .into_iter()
        .map(|(global_id, mask)| InstanceMask { global_id, mask })
        .collect()
}

/// Jaccard index of two pixel sets; 0 when the union is empty.
pub fn compute_iou(a: &BitMask, b: &BitMask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 0.0;
    }
    a.intersection_count(b) as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    Matched(u64),
    New(u64),
    Ignored,
}

/// Decision for one observed frame-local instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchDecision {
    pub local_id: LocalInstanceId,
    pub outcome: MatchOutcome,
    pub best_iou: f64,
}

impl MatchDecision {
    /// Resolved global id; 0 for ignored observations.
    pub fn global_id(&self) -> u64 {
        match self.outcome {
            MatchOutcome::Matched(id) | MatchOutcome::New(id) => id,
            MatchOutcome::Ignored => 0,
        }
    }

    /// One-line debug trace record.
    pub fn trace_line(&self, frame_index: usize) -> String {
        let (kind, id) = match self.outcome {
            MatchOutcome::Matched(id) => ("matched", id),
            MatchOutcome::New(id) => ("new", id),
            MatchOutcome::Ignored => ("ignored", 0),
        };
        format!(
            "frame={} local={} outcome={} global={} iou={:.4}",
            frame_index, self.local_id, kind, id, self.best_iou
        )
    }
}

/// Pixel supports of the observed frame-local instances.
pub fn observed_instance_masks(
    merged: &Raster<PanopticLabel2D>,
) -> BTreeMap<LocalInstanceId, BitMask> {
    let mut out: BTreeMap<LocalInstanceId, BitMask> = BTreeMap::new();
    for (u, v, label) in merged.iter_pixels() {
        if label.instance_id > 0 {
            out.entry(label.instance_id)
                .or_insert_with(|| BitMask::new(merged.width(), merged.height()))
                .set(u, v);
        }
    }
    out
}

/// Resolve every observed instance against the map masks: best IoU
/// above `theta_m` matches (ties to the lowest global id), at or below
/// `theta_n` a fresh global id is allocated, anything between is
/// ignored for this frame. Matching is not exclusive across observed
/// instances.
pub fn match_instances(
    masks: &[InstanceMask],
    merged: &Raster<PanopticLabel2D>,
    map: &mut PanopticMap,
    params: &MapParams,
) -> Result<BTreeMap<LocalInstanceId, MatchDecision>, ParamError> {
    if params.theta_m < params.theta_n {
        return Err(ParamError::ThresholdOrder {
            theta_m: params.theta_m,
            theta_n: params.theta_n,
        });
    }
    let observed = observed_instance_masks(merged);
    let mut decisions = BTreeMap::new();
    for (local_id, pixels) in &observed {
        let mut best_iou = 0.0;
        let mut best_global: Option<u64> = None;
        for m in masks {
            let iou = compute_iou(&m.mask, pixels);
            let take = match best_global {
                None => iou > 0.0,
                Some(current) => {
                    iou > best_iou || (iou == best_iou && m.global_id < current)
                }
            };
            if take {
                best_iou = iou;
                best_global = Some(m.global_id);
            }
        }
        let outcome = if best_iou > params.theta_m {
            MatchOutcome::Matched(best_global.expect("positive iou has a source"))
        } else if best_iou <= params.theta_n {
            MatchOutcome::New(map.alloc_global_id())
        } else {
            MatchOutcome::Ignored
        };
        decisions.insert(
            *local_id,
            MatchDecision {
                local_id: *local_id,
                outcome,
                best_iou,
            },
        );
    }
    Ok(decisions)
}
