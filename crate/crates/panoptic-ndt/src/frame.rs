//! One RGB-D observation: depth, semantic/instance label rasters with
//! confidence scores, and the 2D panoptic merge.

use std::collections::HashMap;

use thiserror::Error;

use crate::classes::{ClassId, ClassTable, VOID_CLASS};
use crate::geometry::{Intrinsics, Pose};
use crate::raster::Raster;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("raster sizes differ within the frame")]
    RasterSizeMismatch,
    #[error("raster size does not match intrinsics ({expected_w}x{expected_h})")]
    IntrinsicsMismatch { expected_w: u32, expected_h: u32 },
    #[error("unknown class id {0} in semantic raster")]
    UnknownClass(ClassId),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}

/// Frame-local instance id; 0 means no instance.
pub type LocalInstanceId = u16;

/// The tuple <class, frame-local instance> assigned to one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PanopticLabel2D {
    pub class_id: ClassId,
    pub instance_id: LocalInstanceId,
}

impl PanopticLabel2D {
    pub fn new(class_id: ClassId, instance_id: LocalInstanceId) -> Self {
        Self {
            class_id,
            instance_id,
        }
    }

    pub fn void() -> Self {
        Self::new(VOID_CLASS, 0)
    }
}

/// One observation as delivered by the segmentation stage. Depth of 0
/// or NaN marks an invalid pixel. Scores default to 1.0 when the
/// source provides none (ground-truth mapping mode).
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticFrame {
    pub depth: Raster<f64>,
    pub sem: Raster<ClassId>,
    pub inst: Raster<LocalInstanceId>,
    pub sem_score: Raster<f64>,
    pub inst_score: Raster<f64>,
    pub pose: Pose,
    pub intr: Intrinsics,
}

impl PanopticFrame {
    /// Ground-truth construction: scores fixed at 1.0.
    pub fn with_unit_scores(
        depth: Raster<f64>,
        sem: Raster<ClassId>,
        inst: Raster<LocalInstanceId>,
        pose: Pose,
        intr: Intrinsics,
    ) -> Result<Self, FrameError> {
        let ones = Raster::filled(depth.width(), depth.height(), 1.0);
        Self::new(depth, sem, inst, ones.clone(), ones, pose, intr)
    }

    pub fn new(
        depth: Raster<f64>,
        sem: Raster<ClassId>,
        inst: Raster<LocalInstanceId>,
        sem_score: Raster<f64>,
        inst_score: Raster<f64>,
        pose: Pose,
        intr: Intrinsics,
    ) -> Result<Self, FrameError> {
        if !(depth.same_size(&sem)
            && depth.same_size(&inst)
            && depth.same_size(&sem_score)
            && depth.same_size(&inst_score))
        {
            return Err(FrameError::RasterSizeMismatch);
        }
        if depth.width() != intr.width || depth.height() != intr.height {
            return Err(FrameError::IntrinsicsMismatch {
                expected_w: intr.width,
                expected_h: intr.height,
            });
        }
        for &s in sem_score.data().iter().chain(inst_score.data()) {
            if !(0.0..=1.0).contains(&s) {
                return Err(FrameError::ScoreOutOfRange(s));
            }
        }
        Ok(Self {
            depth,
            sem,
            inst,
            sem_score,
            inst_score,
            pose,
            intr,
        })
    }

    pub fn width(&self) -> u32 {
        self.depth.width()
    }

    pub fn height(&self) -> u32 {
        self.depth.height()
    }

    /// Valid depth at a pixel, if any.
    pub fn depth_at(&self, u: u32, v: u32) -> Option<f64> {
        let d = *self.depth.get(u, v);
        (d.is_finite() && d > 0.0).then_some(d)
    }
}

/// Merge semantic and instance rasters into per-pixel panoptic labels.
///
/// Every pixel of a frame-local instance receives the instance's
/// semantic mode, provided that mode is a thing class; the instance is
/// dissolved to per-pixel labels otherwise. Pixels without an instance
/// keep their own semantic label. Mode ties break to the lowest class
/// id.
pub fn merge_panoptic(
    sem: &Raster<ClassId>,
    inst: &Raster<LocalInstanceId>,
    table: &ClassTable,
) -> Result<Raster<PanopticLabel2D>, FrameError> {
    if !sem.same_size(inst) {
        return Err(FrameError::RasterSizeMismatch);
    }
    for &c in sem.data() {
        if !table.contains(c) {
            return Err(FrameError::UnknownClass(c));
        }
    }

    // Vote per instance over its support.
    let mut votes: HashMap<LocalInstanceId, HashMap<ClassId, usize>> = HashMap::new();
    for (&z, &c) in inst.data().iter().zip(sem.data()) {
        if z > 0 {
            *votes.entry(z).or_default().entry(c).or_insert(0) += 1;
        }
    }
    let mut modes: HashMap<LocalInstanceId, ClassId> = HashMap::new();
    for (z, counts) in &votes {
        let mode = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(c, _)| *c)
            .unwrap();
        modes.insert(*z, mode);
    }

    let mut out = Raster::filled(sem.width(), sem.height(), PanopticLabel2D::void());
    for i in 0..sem.data().len() {
        let c = sem.data()[i];
        let z = inst.data()[i];
        let label = if c == VOID_CLASS {
            // Void pixels never join instances.
            PanopticLabel2D::void()
        } else if z > 0 {
            let mode = modes[&z];
            if table.is_thing(mode) {
                PanopticLabel2D::new(mode, z)
            } else {
                // Mixed instance whose mode is stuff or void: dissolve.
                PanopticLabel2D::new(c, 0)
            }
        } else {
            PanopticLabel2D::new(c, 0)
        };
        out.data_mut()[i] = label;
    }
    Ok(out)
}

/// S^P = S^L * S^Z, elementwise.
pub fn panoptic_score(sem_score: &Raster<f64>, inst_score: &Raster<f64>) -> Raster<f64> {
    assert!(sem_score.same_size(inst_score));
    Raster::from_vec(
        sem_score.width(),
        sem_score.height(),
        sem_score
            .data()
            .iter()
            .zip(inst_score.data())
            .map(|(a, b)| a * b)
            .collect(),
    )
}
