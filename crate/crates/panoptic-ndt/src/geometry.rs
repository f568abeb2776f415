//! Pinhole camera model and rigid-body transforms.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    BadFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside raster {width}x{height}")]
    BadPrincipalPoint {
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    },
    #[error("raster dimensions must be nonzero")]
    EmptyRaster,
    #[error("rotation is not orthonormal within 1e-9")]
    NotOrthonormal,
    #[error("rotation determinant is not +1")]
    NotProperRotation,
}

/// Pinhole intrinsics. Pixel (u, v) indexes column u, row v; the pixel
/// center sits at raster coordinate (u, v).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyRaster);
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::BadFocal { fx, fy });
        }
        if !(0.0 <= cx && cx < width as f64 && 0.0 <= cy && cy < height as f64) {
            return Err(GeometryError::BadPrincipalPoint {
                cx,
                cy,
                width,
                height,
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Camera-to-world rigid transform. Camera convention: +z forward,
/// +x right, +y down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let residual = rotation.transpose() * rotation - Matrix3::identity();
        if residual.amax() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal);
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotProperRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera origin in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Camera frame -> world frame.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World frame -> camera frame.
    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// self ∘ other: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Integer raster coordinate (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub u: u32,
    pub v: u32,
}

impl Pixel {
    pub fn new(u: u32, v: u32) -> Self {
        Self { u, v }
    }
}

/// Lift a pixel with a depth measurement into a world point.
///
/// Depth is the camera-frame z coordinate, not the ray length. Rejects
/// non-finite or non-positive depth so callers can skip the pixel.
pub fn unproject(pixel: Pixel, depth: f64, intr: &Intrinsics, pose: &Pose) -> Option<Vector3<f64>> {
    if !depth.is_finite() || depth <= 0.0 {
        return None;
    }
    let x = (pixel.u as f64 - intr.cx) * depth / intr.fx;
    let y = (pixel.v as f64 - intr.cy) * depth / intr.fy;
    Some(pose.transform(&Vector3::new(x, y, depth)))
}

fn round_half_away(x: f64) -> f64 {
    // f64::round rounds half-way cases away from zero.
    x.round()
}

/// Project a world point to a rounded pixel and its camera-frame depth.
/// Returns None when the point is behind the camera or lands outside
/// the raster.
pub fn project(point: &Vector3<f64>, intr: &Intrinsics, pose: &Pose) -> Option<(Pixel, f64)> {
    let cam = pose.inverse_transform(point);
    if cam.z <= 0.0 || !cam.z.is_finite() {
        return None;
    }
    let u = round_half_away(intr.fx * cam.x / cam.z + intr.cx);
    let v = round_half_away(intr.fy * cam.y / cam.z + intr.cy);
    if u < 0.0 || v < 0.0 || u >= intr.width as f64 || v >= intr.height as f64 {
        return None;
    }
    Some((Pixel::new(u as u32, v as u32), cam.z))
}

/// Continuous (unrounded) projection, used by the footprint renderer.
/// Returns (u, v, depth) without the raster clip.
pub fn project_continuous(point: &Vector3<f64>, intr: &Intrinsics, pose: &Pose) -> Option<(f64, f64, f64)> {
    let cam = pose.inverse_transform(point);
    if cam.z <= 0.0 || !cam.z.is_finite() {
        return None;
    }
    Some((
        intr.fx * cam.x / cam.z + intr.cx,
        intr.fy * cam.y / cam.z + intr.cy,
        cam.z,
    ))
}
