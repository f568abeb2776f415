//! Deriving a voxel's panoptic label from its histograms.

use nalgebra::{Matrix3, Vector3};

use crate::classes::{ClassId, ClassTable, VOID_CLASS};
use crate::map::{NdtVoxel, PanopticMap, VoxelIndex};

/// The tuple <class, global instance> carried by a voxel; instance 0
/// means none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PanopticLabel3D {
    pub class_id: ClassId,
    pub instance_id: u64,
}

impl PanopticLabel3D {
    pub fn new(class_id: ClassId, instance_id: u64) -> Self {
        Self {
            class_id,
            instance_id,
        }
    }

    pub fn void() -> Self {
        Self::new(VOID_CLASS, 0)
    }
}

/// Whether the voxel currently counts as thing: the stuff share of the
/// semantic histogram stays below `theta_st`. Unobserved voxels are
/// never thing.
pub fn is_thing(voxel: &NdtVoxel, theta_st: f64) -> bool {
    if voxel.sem.is_unobserved() {
        return false;
    }
    voxel.sem.stuff_proportion() < theta_st
}

/// Whether to propagate instance information: the voxel is thing and
/// enough of its observations carried instances.
pub fn pt_thing(voxel: &NdtVoxel, theta_st: f64, theta_o: f64) -> bool {
    if voxel.n_sem == 0 {
        return false;
    }
    is_thing(voxel, theta_st) && (voxel.n_inst as f64 / voxel.n_sem as f64) >= theta_o
}

/// Derive the voxel's panoptic label. When instance propagation is
/// blocked, the class argmax runs over all classes; a thing winner
/// without an instance forms a garbage segment.
pub fn propagate_label(
    voxel: &NdtVoxel,
    table: &ClassTable,
    theta_st: f64,
    theta_o: f64,
) -> PanopticLabel3D {
    if voxel.n_sem == 0 {
        return PanopticLabel3D::void();
    }
    if pt_thing(voxel, theta_st, theta_o) {
        let class = voxel
            .sem
            .argmax_thing(table)
            .unwrap_or(VOID_CLASS);
        let instance = voxel.inst.argmax().unwrap_or(0);
        PanopticLabel3D::new(class, instance)
    } else {
        let class = voxel.sem.argmax().unwrap_or(VOID_CLASS);
        PanopticLabel3D::new(class, 0)
    }
}

/// One labeled voxel as consumed by the renderer, evaluation and
/// exporters.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVoxel {
    pub index: VoxelIndex,
    pub label: PanopticLabel3D,
    /// Semantic-only argmax, independent of the thing/stuff gating.
    pub semantic_class: ClassId,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub log_odds: f64,
}

/// Materialize the propagated labels of every voxel that has both
/// semantic observations and a valid shape, ascending by index. Labels
/// are cached on the voxels, stamped with the current frame counter.
pub fn export_labels(map: &mut PanopticMap, theta_st: f64, theta_o: f64) -> Vec<LabeledVoxel> {
    let stamp = map.frame_counter();
    let table = map.class_table().clone();
    let mut out = Vec::new();
    for index in map.sorted_indices() {
        let voxel = map.voxel_mut(index).expect("index from map");
        if voxel.n_sem == 0 {
            continue;
        }
        let Some((mean, cov)) = voxel.shape.distribution() else {
            continue;
        };
        let label = match voxel.cached_label() {
            Some(cached) => cached.label,
            None => {
                let label = propagate_label(voxel, &table, theta_st, theta_o);
                voxel.store_label(label, stamp);
                label
            }
        };
        let semantic_class = voxel.sem.argmax().unwrap_or(VOID_CLASS);
        out.push(LabeledVoxel {
            index,
            label,
            semantic_class,
            mean,
            cov,
            log_odds: voxel.log_odds(),
        });
    }
    out
}
