//! ASCII PLY export of the map: one colored vertex per voxel with a
//! valid shape, positioned at the voxel mean.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classes::ClassId;
use crate::map::PanopticMap;
use crate::params::MapParams;
use crate::propagation::propagate_label;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyMode {
    Semantic,
    Instance,
    Panoptic,
}

impl std::str::FromStr for PlyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "semantic" => Ok(Self::Semantic),
            "instance" => Ok(Self::Instance),
            "panoptic" => Ok(Self::Panoptic),
            other => Err(format!("unknown mode {:?} (semantic|instance|panoptic)", other)),
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i32) % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Deterministic per-class color; void is black.
pub fn class_color(class_id: ClassId) -> [u8; 3] {
    if class_id == 0 {
        return [0, 0, 0];
    }
    let hue = (class_id as f64 * 0.618033988749895).fract();
    hsv_to_rgb(hue, 0.65, 0.95)
}

/// Deterministic per-instance color; no_instance is black.
pub fn instance_color(id: u64) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let hue = (id as f64 * 0.618033988749895).fract();
    hsv_to_rgb(hue, 0.85, 0.9)
}

/// Semantic color nudged per instance so instances of one class stay
/// visually related but distinguishable.
pub fn panoptic_color(class_id: ClassId, instance_id: u64) -> [u8; 3] {
    let base = class_color(class_id);
    if instance_id == 0 {
        return base;
    }
    let mut out = [0u8; 3];
    for (i, (dst, base_channel)) in out.iter_mut().zip(base).enumerate() {
        let salt = [17u64, 31, 47][i];
        let hash = instance_id.wrapping_mul(2654435761).wrapping_add(salt);
        let delta = (hash % 49) as i16 - 24;
        *dst = (base_channel as i16 + delta).clamp(0, 255) as u8;
    }
    out
}

/// Write the map as an ASCII PLY point cloud. Repeated exports of the
/// same map produce identical bytes.
pub fn export_ply(
    map: &PanopticMap,
    path: &Path,
    mode: PlyMode,
    params: &MapParams,
) -> Result<(), PlyError> {
    let table = map.class_table();
    let mut body = String::new();
    let mut count = 0usize;
    for index in map.sorted_indices() {
        let voxel = map.voxel(index).expect("sorted index exists");
        let Some((mean, _)) = voxel.shape.distribution() else {
            continue;
        };
        let label = propagate_label(voxel, table, params.theta_st, params.theta_o);
        let color = match mode {
            PlyMode::Semantic => class_color(label.class_id),
            PlyMode::Instance => instance_color(label.instance_id),
            PlyMode::Panoptic => panoptic_color(label.class_id, label.instance_id),
        };
        let _ = writeln!(
            body,
            "{} {} {} {} {} {}",
            mean.x, mean.y, mean.z, color[0], color[1], color[2]
        );
        count += 1;
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", count);
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         end_header\n",
    );
    out.push_str(&body);
    fs::write(path, out).map_err(|source| PlyError::Io {
        path: path.to_path_buf(),
        source,
    })
}
