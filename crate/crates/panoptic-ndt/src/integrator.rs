//! The per-frame update: geometry and occupancy first, then instance
//! matching against the pre-update histograms, then the instance and
//! semantic histogram updates in that order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::classes::VOID_CLASS;
use crate::frame::{merge_panoptic, panoptic_score, FrameError, LocalInstanceId, PanopticFrame, PanopticLabel2D};
use crate::histogram::HistogramError;
use crate::map::{MapError, PanopticMap};
use crate::params::{MapParams, ParamError};
use crate::raster::Raster;
use crate::tracker::{build_masks, forward_map, match_instances, FrameVoxelCache, MatchDecision, MatchOutcome};

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

/// Counters of one processed frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameStats {
    pub pixels_integrated: usize,
    pub voxels_touched: usize,
    pub instances_matched: usize,
    pub instances_new: usize,
    pub instances_ignored: usize,
}

/// Instance-histogram update: every pixel whose observation resolved
/// to a global id and whose panoptic score clears `theta_z` (strictly)
/// feeds its voxel.
pub fn update_instances(
    map: &mut PanopticMap,
    merged: &Raster<PanopticLabel2D>,
    score_p: &Raster<f64>,
    cache: &FrameVoxelCache,
    decisions: &BTreeMap<LocalInstanceId, MatchDecision>,
    theta_z: f64,
) -> Result<(), HistogramError> {
    for (u, v, label) in merged.iter_pixels() {
        if label.instance_id == 0 {
            continue;
        }
        let Some(decision) = decisions.get(&label.instance_id) else {
            continue;
        };
        let global_id = decision.global_id();
        if global_id == 0 {
            continue;
        }
        let score = *score_p.get(u, v);
        if !(score > theta_z) {
            continue;
        }
        if let Some(cached) = cache.pixel(u, v) {
            map.add_instance_observation(cached.index, global_id, score)?;
        }
    }
    Ok(())
}

/// Semantic-histogram update: every non-void pixel whose semantic
/// score clears `theta_l` (strictly) feeds its voxel.
pub fn update_semantics(
    map: &mut PanopticMap,
    merged: &Raster<PanopticLabel2D>,
    sem_score: &Raster<f64>,
    cache: &FrameVoxelCache,
    theta_l: f64,
) -> Result<(), HistogramError> {
    for (u, v, label) in merged.iter_pixels() {
        if label.class_id == VOID_CLASS {
            continue;
        }
        let score = *sem_score.get(u, v);
        if !(score > theta_l) {
            continue;
        }
        if let Some(cached) = cache.pixel(u, v) {
            map.add_semantic_observation(cached.index, label.class_id, score)?;
        }
    }
    Ok(())
}

/// Integrate one observation into the map.
///
/// Order: forward mapping with shape and occupancy integration, mask
/// building and matching against the pre-update histograms, instance
/// update, semantic update. Histogram writes invalidate the cached
/// labels of the voxels they touch.
pub fn process_frame(
    map: &mut PanopticMap,
    frame: &PanopticFrame,
    params: &MapParams,
) -> Result<FrameStats, ProcessError> {
    process_frame_decisions(map, frame, params).map(|(stats, _)| stats)
}

/// process_frame, also returning the per-instance match decisions for
/// trace output.
pub fn process_frame_decisions(
    map: &mut PanopticMap,
    frame: &PanopticFrame,
    params: &MapParams,
) -> Result<(FrameStats, Vec<MatchDecision>), ProcessError> {
    params.validate()?;
    if frame.width() != frame.intr.width || frame.height() != frame.intr.height {
        return Err(FrameError::IntrinsicsMismatch {
            expected_w: frame.intr.width,
            expected_h: frame.intr.height,
        }
        .into());
    }
    let merged = merge_panoptic(&frame.sem, &frame.inst, map.class_table())?;
    let score_p = panoptic_score(&frame.sem_score, &frame.inst_score);

    // (1) Geometry: forward mapping, shape statistics, occupancy rays.
    let cache = forward_map(frame, map, params.max_depth);
    let origin = frame.pose.center();
    let mut pixels_integrated = 0;
    for v in 0..frame.height() {
        for u in 0..frame.width() {
            let Some(cached) = cache.pixel(u, v).copied() else {
                continue;
            };
            let size = map.voxel_size();
            map.voxel_or_insert(cached.index)
                .integrate_point(cached.index, size, &cached.world)?;
            map.update_occupancy(&origin, &cached.world, true);
            pixels_integrated += 1;
        }
    }

    // (2) Matching against pre-update histograms.
    let masks = build_masks(map, &cache, &frame.intr, &frame.pose, params);
    let decisions = match_instances(&masks, &merged, map, params)?;

    // (3) Instance update, then (4) semantic update.
    update_instances(map, &merged, &score_p, &cache, &decisions, params.theta_z)?;
    update_semantics(map, &merged, &frame.sem_score, &cache, params.theta_l)?;

    map.advance_frame();

    let mut stats = FrameStats {
        pixels_integrated,
        voxels_touched: cache.touched().len(),
        ..Default::default()
    };
    for d in decisions.values() {
        match d.outcome {
            MatchOutcome::Matched(_) => stats.instances_matched += 1,
            MatchOutcome::New(_) => stats.instances_new += 1,
            MatchOutcome::Ignored => stats.instances_ignored += 1,
        }
    }
    Ok((stats, decisions.into_values().collect()))
}
