//! Back-projection of voxels to the camera plane.
//!
//! A voxel's footprint is the set of pixels inside the k-sigma
//! confidence ellipse of its projected Gaussian: the covariance is
//! pushed through the first-order linearization of the pinhole
//! projection at the voxel mean.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::classes::{ClassId, VOID_CLASS};
use crate::geometry::{project, project_continuous, Intrinsics, Pixel, Pose};
use crate::map::NdtVoxel;
use crate::propagation::{LabeledVoxel, PanopticLabel3D};
use crate::raster::Raster;

/// Image-plane covariance of a world-space Gaussian at `mean`.
fn projected_covariance(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    intr: &Intrinsics,
    pose: &Pose,
) -> Matrix2<f64> {
    let cam = pose.inverse_transform(mean);
    let z = cam.z;
    let jacobian_cam = Matrix2x3::new(
        intr.fx / z,
        0.0,
        -intr.fx * cam.x / (z * z),
        0.0,
        intr.fy / z,
        -intr.fy * cam.y / (z * z),
    );
    let jacobian = jacobian_cam * pose.rotation().transpose();
    jacobian * cov * jacobian.transpose()
}

/// vtou: pixels covered by the projected k-sigma ellipse of the
/// Gaussian, clipped to the raster. The rounded projection of the mean
/// is always included. Empty when the mean is behind the camera.
pub fn gaussian_footprint(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    intr: &Intrinsics,
    pose: &Pose,
    k_sigma: f64,
) -> Vec<Pixel> {
    let Some((pu, pv, _)) = project_continuous(mean, intr, pose) else {
        return Vec::new();
    };
    let c = projected_covariance(mean, cov, intr, pose);
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];

    let mut out = Vec::new();
    let center = {
        let (u, v) = (pu.round(), pv.round());
        (u >= 0.0 && v >= 0.0 && u < intr.width as f64 && v < intr.height as f64)
            .then(|| Pixel::new(u as u32, v as u32))
    };

    if det <= f64::MIN_POSITIVE || !det.is_finite() {
        // Degenerate ellipse: just the center pixel.
        return center.into_iter().collect();
    }
    let inv = Matrix2::new(c[(1, 1)], -c[(0, 1)], -c[(1, 0)], c[(0, 0)]) / det;

    // The ellipse's axis-aligned bounding box has half-extents
    // k * sqrt(C_ii).
    let hu = k_sigma * c[(0, 0)].sqrt();
    let hv = k_sigma * c[(1, 1)].sqrt();
    let u_min = ((pu - hu).ceil().max(0.0)) as i64;
    let u_max = ((pu + hu).floor().min(intr.width as f64 - 1.0)) as i64;
    let v_min = ((pv - hv).ceil().max(0.0)) as i64;
    let v_max = ((pv + hv).floor().min(intr.height as f64 - 1.0)) as i64;
    let k2 = k_sigma * k_sigma;
    for v in v_min..=v_max {
        for u in u_min..=u_max {
            let d = Vector2::new(u as f64 - pu, v as f64 - pv);
            if (d.transpose() * inv * d)[0] <= k2 {
                out.push(Pixel::new(u as u32, v as u32));
            }
        }
    }
    if let Some(cp) = center {
        if !out.contains(&cp) {
            out.push(cp);
        }
    }
    out
}

/// Footprint of a voxel's stored distribution; empty when the voxel
/// has no valid distribution.
pub fn vtou(voxel: &NdtVoxel, intr: &Intrinsics, pose: &Pose, k_sigma: f64) -> Vec<Pixel> {
    match voxel.shape.distribution() {
        Some((mean, cov)) => gaussian_footprint(&mean, &cov, intr, pose, k_sigma),
        None => Vec::new(),
    }
}

/// Full-map back-projection. Uncovered pixels are void with infinite
/// depth.
#[derive(Debug, Clone)]
pub struct RenderedView {
    /// Semantic-only argmax channel.
    pub sem: Raster<ClassId>,
    /// Class channel of the propagated panoptic label.
    pub pan_class: Raster<ClassId>,
    /// Global instance ids; 0 where none.
    pub instance: Raster<u64>,
    pub depth: Raster<f64>,
}

impl RenderedView {
    fn new(width: u32, height: u32) -> Self {
        Self {
            sem: Raster::filled(width, height, VOID_CLASS),
            pan_class: Raster::filled(width, height, VOID_CLASS),
            instance: Raster::filled(width, height, 0),
            depth: Raster::filled(width, height, f64::INFINITY),
        }
    }

    pub fn covered(&self, u: u32, v: u32) -> bool {
        self.depth.get(u, v).is_finite()
    }

    pub fn panoptic_at(&self, u: u32, v: u32) -> PanopticLabel3D {
        PanopticLabel3D::new(*self.pan_class.get(u, v), *self.instance.get(u, v))
    }
}

/// Rasterize labeled voxels with a per-pixel depth test; the voxel
/// with the nearest projected mean wins a pixel. Voxels whose mean
/// projects outside the raster or beyond `max_depth` are skipped.
pub fn render_view(
    voxels: &[LabeledVoxel],
    intr: &Intrinsics,
    pose: &Pose,
    k_sigma: f64,
    max_depth: f64,
) -> RenderedView {
    let mut view = RenderedView::new(intr.width, intr.height);
    for voxel in voxels {
        let Some((_, depth)) = project(&voxel.mean, intr, pose) else {
            continue;
        };
        if depth >= max_depth {
            continue;
        }
        for pixel in gaussian_footprint(&voxel.mean, &voxel.cov, intr, pose, k_sigma) {
            if depth < *view.depth.at(pixel) {
                view.depth.set(pixel.u, pixel.v, depth);
                view.sem.set(pixel.u, pixel.v, voxel.semantic_class);
                view.pan_class.set(pixel.u, pixel.v, voxel.label.class_id);
                view.instance.set(pixel.u, pixel.v, voxel.label.instance_id);
            }
        }
    }
    view
}
