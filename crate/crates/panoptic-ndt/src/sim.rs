//! Synthetic RGB-D-like sequences from primitive scenes: depth and
//! panoptic labels rendered by exact ray casting, plus ground-truth
//! surface clouds, so the whole pipeline is testable at desk scale.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::ClassId;
use crate::eval::{GroundTruthCloud, GtPoint};
use crate::frame::{LocalInstanceId, PanopticFrame};
use crate::geometry::{Intrinsics, Pose};
use crate::raster::Raster;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("pose index {index} out of range (frames = {frames})")]
    PoseIndex { index: usize, frames: usize },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("object {0} extends outside the room")]
    ObjectOutsideRoom(usize),
    #[error("duplicate or zero gt instance id {0}")]
    BadInstanceId(LocalInstanceId),
    #[error("orbit needs a positive radius and at least one frame")]
    BadOrbit,
}

/// Room faces. The room is an axis-aligned box seen from inside;
/// disabled faces are openings through which rays escape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    XNeg,
    XPos,
    YNeg,
    YPos,
    Floor,
    Ceiling,
}

const ALL_FACES: [Face; 6] = [
    Face::XNeg,
    Face::XPos,
    Face::YNeg,
    Face::YPos,
    Face::Floor,
    Face::Ceiling,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub wall_class: ClassId,
    pub floor_class: ClassId,
    pub ceiling_class: ClassId,
    /// Faces without geometry (doorways, open ceilings).
    #[serde(default)]
    pub open_faces: Vec<Face>,
}

impl RoomSpec {
    fn face_class(&self, face: Face) -> ClassId {
        match face {
            Face::Floor => self.floor_class,
            Face::Ceiling => self.ceiling_class,
            _ => self.wall_class,
        }
    }

    fn is_open(&self, face: Face) -> bool {
        self.open_faces.contains(&face)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub class_id: ClassId,
    pub instance_id: LocalInstanceId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Trajectory {
    /// Camera circles `center` at the given radius and height offset,
    /// aimed at `center`.
    Orbit {
        center: [f64; 3],
        radius: f64,
        height: f64,
        frames: usize,
    },
    /// Explicit camera-to-world matrices, row-major 4x4.
    Waypoints(Vec<[f64; 16]>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntrinsicsSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl IntrinsicsSpec {
    pub fn build(&self) -> Result<Intrinsics, SceneError> {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| SceneError::Intrinsics(e.to_string()))
    }
}

/// A full synthetic scene: room, objects, trajectory and camera.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: RoomSpec,
    pub objects: Vec<ObjectSpec>,
    pub trajectory: Trajectory,
    pub intrinsics: IntrinsicsSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.intrinsics.build()?;
        let mut seen = std::collections::HashSet::new();
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.instance_id == 0 || !seen.insert(obj.instance_id) {
                return Err(SceneError::BadInstanceId(obj.instance_id));
            }
            let inside = match &obj.shape {
                Shape::Box { min, max } => (0..3).all(|a| {
                    self.room.min[a] <= min[a] && max[a] <= self.room.max[a] && min[a] < max[a]
                }),
                Shape::Sphere { center, radius } => (0..3).all(|a| {
                    self.room.min[a] <= center[a] - radius && center[a] + radius <= self.room.max[a]
                }),
            };
            if !inside {
                return Err(SceneError::ObjectOutsideRoom(i));
            }
        }
        if let Trajectory::Orbit { radius, frames, .. } = &self.trajectory {
            if *radius <= 0.0 || *frames == 0 {
                return Err(SceneError::BadOrbit);
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        match &self.trajectory {
            Trajectory::Orbit { frames, .. } => *frames,
            Trajectory::Waypoints(w) => w.len(),
        }
    }

    pub fn pose(&self, index: usize) -> Result<Pose, SceneError> {
        let frames = self.frame_count();
        if index >= frames {
            return Err(SceneError::PoseIndex { index, frames });
        }
        match &self.trajectory {
            Trajectory::Orbit {
                center,
                radius,
                height,
                frames,
            } => {
                let angle = index as f64 * std::f64::consts::TAU / *frames as f64;
                let center = Vector3::from(*center);
                let eye = center + Vector3::new(radius * angle.cos(), radius * angle.sin(), *height);
                Ok(look_at(&eye, &center))
            }
            Trajectory::Waypoints(mats) => {
                let m = &mats[index];
                let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
                let translation = Vector3::new(m[3], m[7], m[11]);
                Pose::new(rotation, translation)
                    .map_err(|e| SceneError::Intrinsics(e.to_string()))
            }
        }
    }

    pub fn poses(&self) -> Result<Vec<Pose>, SceneError> {
        (0..self.frame_count()).map(|i| self.pose(i)).collect()
    }
}

/// Camera-to-world pose looking from `eye` at `target`; +z forward,
/// +y down (world -z up).
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let world_down = Vector3::new(0.0, 0.0, -1.0);
    let mut down = world_down - forward * world_down.dot(&forward);
    if down.norm() < 1e-9 {
        // Looking straight up or down; pick an arbitrary image-down.
        down = Vector3::new(1.0, 0.0, 0.0) - forward * forward.x;
    }
    let down = down.normalize();
    let right = down.cross(&forward);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    Pose::new(rotation, *eye).expect("constructed rotation is orthonormal")
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    class_id: ClassId,
    instance_id: LocalInstanceId,
}

const RAY_EPS: f64 = 1e-9;

/// Entry distance of a ray into a box, for origins outside the box.
fn intersect_box_entry(origin: &Vector3<f64>, dir: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (t0, t1) = {
            let t0 = (min[a] - origin[a]) * inv;
            let t1 = (max[a] - origin[a]) * inv;
            if t0 <= t1 {
                (t0, t1)
            } else {
                (t1, t0)
            }
        };
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > RAY_EPS).then_some(t_near)
}

/// Exit distance and face of a ray leaving a box, for origins inside.
fn intersect_box_exit(origin: &Vector3<f64>, dir: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, Face)> {
    let mut t_exit = f64::INFINITY;
    let mut face = None;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            continue;
        }
        let inv = 1.0 / dir[a];
        let (t, f) = if dir[a] > 0.0 {
            (
                (max[a] - origin[a]) * inv,
                match a {
                    0 => Face::XPos,
                    1 => Face::YPos,
                    _ => Face::Ceiling,
                },
            )
        } else {
            (
                (min[a] - origin[a]) * inv,
                match a {
                    0 => Face::XNeg,
                    1 => Face::YNeg,
                    _ => Face::Floor,
                },
            )
        };
        if t < t_exit {
            t_exit = t;
            face = Some(f);
        }
    }
    face.map(|f| (t_exit, f))
}

fn intersect_sphere(origin: &Vector3<f64>, dir: &Vector3<f64>, center: &Vector3<f64>, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let a = dir.dot(dir);
    let b = 2.0 * oc.dot(dir);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let t0 = (-b - sqrt_disc) / (2.0 * a);
    let t1 = (-b + sqrt_disc) / (2.0 * a);
    if t0 > RAY_EPS {
        Some(t0)
    } else if t1 > RAY_EPS {
        Some(t1)
    } else {
        None
    }
}

/// Cast one ray against the scene; `dir` need not be normalized, and
/// the returned t is in units of |dir|.
fn cast_ray(scene: &SceneSpec, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for obj in &scene.objects {
        let t = match &obj.shape {
            Shape::Box { min, max } => {
                intersect_box_entry(origin, dir, &Vector3::from(*min), &Vector3::from(*max))
            }
            Shape::Sphere { center, radius } => {
                intersect_sphere(origin, dir, &Vector3::from(*center), *radius)
            }
        };
        if let Some(t) = t {
            if best.as_ref().is_none_or(|h| t < h.t) {
                best = Some(Hit {
                    t,
                    class_id: obj.class_id,
                    instance_id: obj.instance_id,
                });
            }
        }
    }
    let room_min = Vector3::from(scene.room.min);
    let room_max = Vector3::from(scene.room.max);
    if let Some((t, face)) = intersect_box_exit(origin, dir, &room_min, &room_max) {
        if best.as_ref().is_none_or(|h| t < h.t) && !scene.room.is_open(face) {
            best = Some(Hit {
                t,
                class_id: scene.room.face_class(face),
                instance_id: 0,
            });
        }
    }
    best
}

/// Render one frame by exact ray casting. Labels are ground truth and
/// all scores are 1. Pixels whose rays escape the room carry invalid
/// (zero) depth.
pub fn raycast_frame(scene: &SceneSpec, pose_index: usize) -> Result<PanopticFrame, SceneError> {
    scene.validate()?;
    let intr = scene.intrinsics.build()?;
    let pose = scene.pose(pose_index)?;
    let origin = pose.center();

    let mut depth = Raster::filled(intr.width, intr.height, 0.0f64);
    let mut sem = Raster::filled(intr.width, intr.height, 0u8);
    let mut inst = Raster::filled(intr.width, intr.height, 0u16);
    for v in 0..intr.height {
        for u in 0..intr.width {
            // Camera-frame direction with unit z: the ray parameter t
            // is then exactly the camera-frame depth.
            let dir_cam = Vector3::new(
                (u as f64 - intr.cx) / intr.fx,
                (v as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let dir_world = pose.rotation() * dir_cam;
            if let Some(hit) = cast_ray(scene, &origin, &dir_world) {
                depth.set(u, v, hit.t);
                sem.set(u, v, hit.class_id);
                inst.set(u, v, hit.instance_id);
            }
        }
    }
    PanopticFrame::with_unit_scores(depth, sem, inst, pose, intr)
        .map_err(|e| SceneError::Intrinsics(e.to_string()))
}

/// Corruption model for clean frames: depth noise growing with z^2,
/// semantic flips to confusable classes, and instance border erosion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Gaussian depth sigma at 1 m, scaled by depth squared.
    pub depth_sigma_at_1m: f64,
    /// Per-pixel probability of flipping the semantic label.
    pub sem_flip_prob: f64,
    /// Flip targets per class; classes without an entry never flip.
    pub confusions: Vec<(ClassId, ClassId)>,
    /// Erosion rounds applied to instance borders.
    pub border_erode_px: u32,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            depth_sigma_at_1m: 0.0,
            sem_flip_prob: 0.0,
            confusions: Vec::new(),
            border_erode_px: 0,
            seed: 0,
        }
    }

    fn confusion_of(&self, class: ClassId) -> Option<ClassId> {
        self.confusions
            .iter()
            .find(|(from, _)| *from == class)
            .map(|(_, to)| *to)
    }
}

/// Score assigned to flipped semantic labels.
pub const FLIPPED_SCORE: f64 = 0.6;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; consumes two uniforms.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Corrupt a frame deterministically under the noise seed. The input
/// frame is left untouched.
pub fn apply_noise(frame: &PanopticFrame, noise: &NoiseSpec) -> PanopticFrame {
    let mut out = frame.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);

    if noise.depth_sigma_at_1m > 0.0 {
        for d in out.depth.data_mut() {
            if d.is_finite() && *d > 0.0 {
                let sigma = noise.depth_sigma_at_1m * *d * *d;
                *d = (*d + gaussian(&mut rng) * sigma).max(1e-3);
            }
        }
    }

    if noise.sem_flip_prob > 0.0 {
        let n = out.sem.len();
        for i in 0..n {
            let class = out.sem.data()[i];
            let Some(target) = noise.confusion_of(class) else {
                continue;
            };
            if rng.random::<f64>() < noise.sem_flip_prob {
                out.sem.data_mut()[i] = target;
                out.sem_score.data_mut()[i] = FLIPPED_SCORE;
            }
        }
    }

    for _ in 0..noise.border_erode_px {
        let src = out.inst.clone();
        let (w, h) = (src.width(), src.height());
        for v in 0..h {
            for u in 0..w {
                let z = *src.get(u, v);
                if z == 0 {
                    continue;
                }
                let mut boundary = false;
                if u > 0 && *src.get(u - 1, v) != z {
                    boundary = true;
                }
                if u + 1 < w && *src.get(u + 1, v) != z {
                    boundary = true;
                }
                if v > 0 && *src.get(u, v - 1) != z {
                    boundary = true;
                }
                if v + 1 < h && *src.get(u, v + 1) != z {
                    boundary = true;
                }
                if boundary {
                    out.inst.set(u, v, 0);
                }
            }
        }
    }
    out
}

/// Uniform surface sampling of every primitive face (and every closed
/// room face), labeled with the owning primitive.
pub fn sample_gt_cloud(
    scene: &SceneSpec,
    points_per_m2: f64,
    seed: u64,
) -> Result<GroundTruthCloud, SceneError> {
    scene.validate()?;
    assert!(points_per_m2 > 0.0, "density must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();

    let sample_rect = |rng: &mut ChaCha8Rng,
                           origin: Vector3<f64>,
                           e1: Vector3<f64>,
                           e2: Vector3<f64>,
                           class_id: ClassId,
                           instance_id: u64,
                           points: &mut Vec<GtPoint>| {
        let area = e1.norm() * e2.norm();
        let n = (area * points_per_m2).round() as usize;
        for _ in 0..n {
            let a: f64 = rng.random::<f64>();
            let b: f64 = rng.random::<f64>();
            points.push(GtPoint {
                position: origin + e1 * a + e2 * b,
                class_id,
                instance_id,
            });
        }
    };

    // Room faces, inward-facing surfaces of the enclosing box.
    let rmin = Vector3::from(scene.room.min);
    let rmax = Vector3::from(scene.room.max);
    let ext = rmax - rmin;
    for face in ALL_FACES {
        if scene.room.is_open(face) {
            continue;
        }
        let class = scene.room.face_class(face);
        let (origin, e1, e2) = match face {
            Face::XNeg => (rmin, Vector3::new(0.0, ext.y, 0.0), Vector3::new(0.0, 0.0, ext.z)),
            Face::XPos => (
                Vector3::new(rmax.x, rmin.y, rmin.z),
                Vector3::new(0.0, ext.y, 0.0),
                Vector3::new(0.0, 0.0, ext.z),
            ),
            Face::YNeg => (rmin, Vector3::new(ext.x, 0.0, 0.0), Vector3::new(0.0, 0.0, ext.z)),
            Face::YPos => (
                Vector3::new(rmin.x, rmax.y, rmin.z),
                Vector3::new(ext.x, 0.0, 0.0),
                Vector3::new(0.0, 0.0, ext.z),
            ),
            Face::Floor => (rmin, Vector3::new(ext.x, 0.0, 0.0), Vector3::new(0.0, ext.y, 0.0)),
            Face::Ceiling => (
                Vector3::new(rmin.x, rmin.y, rmax.z),
                Vector3::new(ext.x, 0.0, 0.0),
                Vector3::new(0.0, ext.y, 0.0),
            ),
        };
        sample_rect(&mut rng, origin, e1, e2, class, 0, &mut points);
    }

    for obj in &scene.objects {
        match &obj.shape {
            Shape::Box { min, max } => {
                let bmin = Vector3::from(*min);
                let bmax = Vector3::from(*max);
                let e = bmax - bmin;
                let faces = [
                    (bmin, Vector3::new(0.0, e.y, 0.0), Vector3::new(0.0, 0.0, e.z)),
                    (
                        Vector3::new(bmax.x, bmin.y, bmin.z),
                        Vector3::new(0.0, e.y, 0.0),
                        Vector3::new(0.0, 0.0, e.z),
                    ),
                    (bmin, Vector3::new(e.x, 0.0, 0.0), Vector3::new(0.0, 0.0, e.z)),
                    (
                        Vector3::new(bmin.x, bmax.y, bmin.z),
                        Vector3::new(e.x, 0.0, 0.0),
                        Vector3::new(0.0, 0.0, e.z),
                    ),
                    (bmin, Vector3::new(e.x, 0.0, 0.0), Vector3::new(0.0, e.y, 0.0)),
                    (
                        Vector3::new(bmin.x, bmin.y, bmax.z),
                        Vector3::new(e.x, 0.0, 0.0),
                        Vector3::new(0.0, e.y, 0.0),
                    ),
                ];
                for (origin, e1, e2) in faces {
                    sample_rect(
                        &mut rng,
                        origin,
                        e1,
                        e2,
                        obj.class_id,
                        obj.instance_id as u64,
                        &mut points,
                    );
                }
            }
            Shape::Sphere { center, radius } => {
                let area = 4.0 * std::f64::consts::PI * radius * radius;
                let n = (area * points_per_m2).round() as usize;
                let c = Vector3::from(*center);
                for _ in 0..n {
                    let dir = loop {
                        let d = Vector3::new(
                            gaussian(&mut rng),
                            gaussian(&mut rng),
                            gaussian(&mut rng),
                        );
                        if d.norm() > 1e-9 {
                            break d.normalize();
                        }
                    };
                    points.push(GtPoint {
                        position: c + dir * *radius,
                        class_id: obj.class_id,
                        instance_id: obj.instance_id as u64,
                    });
                }
            }
        }
    }
    Ok(GroundTruthCloud { points })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{unproject, Pixel};

    /// 1 wall, 2 floor, 3 ceiling (stuff); 4 chair, 5 table (thing).
    pub(crate) fn test_scene() -> SceneSpec {
        SceneSpec {
            room: RoomSpec {
                min: [0.0, 0.0, 0.0],
                max: [6.0, 6.0, 2.5],
                wall_class: 1,
                floor_class: 2,
                ceiling_class: 3,
                open_faces: vec![],
            },
            objects: vec![
                ObjectSpec {
                    shape: Shape::Box {
                        min: [2.6, 2.8, 0.0],
                        max: [2.9, 3.1, 0.4],
                    },
                    class_id: 4,
                    instance_id: 1,
                },
                ObjectSpec {
                    shape: Shape::Sphere {
                        center: [3.4, 3.2, 1.0],
                        radius: 0.2,
                    },
                    class_id: 5,
                    instance_id: 2,
                },
            ],
            trajectory: Trajectory::Orbit {
                center: [3.0, 3.0, 0.9],
                radius: 2.2,
                height: 1.0,
                frames: 8,
            },
            intrinsics: IntrinsicsSpec {
                fx: 80.0,
                fy: 80.0,
                cx: 80.0,
                cy: 60.0,
                width: 160,
                height: 120,
            },
        }
    }

    #[test]
    fn wall_hit_at_principal_pixel() {
        // Camera 2 m from the x = 0 wall, looking straight at it.
        let scene = SceneSpec {
            objects: vec![],
            trajectory: Trajectory::Waypoints(vec![pose_matrix(&look_at(
                &Vector3::new(2.0, 3.0, 1.25),
                &Vector3::new(0.0, 3.0, 1.25),
            ))]),
            ..test_scene()
        };
        let frame = raycast_frame(&scene, 0).unwrap();
        let intr = scene.intrinsics.build().unwrap();
        let d = *frame.depth.get(intr.cx as u32, intr.cy as u32);
        assert!((d - 2.0).abs() < 1e-9);
        assert_eq!(*frame.sem.get(intr.cx as u32, intr.cy as u32), 1);
        assert_eq!(*frame.inst.get(intr.cx as u32, intr.cy as u32), 0);
    }

    fn pose_matrix(pose: &Pose) -> [f64; 16] {
        let r = pose.rotation();
        let t = pose.translation();
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    #[test]
    fn box_occludes_wall() {
        // Box face at x = 2.9 between the camera at x = 4 and the wall
        // at x = 0, at box height.
        let scene = SceneSpec {
            trajectory: Trajectory::Waypoints(vec![pose_matrix(&look_at(
                &Vector3::new(4.0, 2.95, 0.2),
                &Vector3::new(0.0, 2.95, 0.2),
            ))]),
            ..test_scene()
        };
        let frame = raycast_frame(&scene, 0).unwrap();
        let intr = scene.intrinsics.build().unwrap();
        let (u, v) = (intr.cx as u32, intr.cy as u32);
        assert!((frame.depth.get(u, v) - 1.1).abs() < 1e-9);
        assert_eq!(*frame.sem.get(u, v), 4);
        assert_eq!(*frame.inst.get(u, v), 1);
    }

    #[test]
    fn open_face_gives_invalid_depth() {
        let mut scene = SceneSpec {
            objects: vec![],
            trajectory: Trajectory::Waypoints(vec![pose_matrix(&look_at(
                &Vector3::new(2.0, 3.0, 1.25),
                &Vector3::new(0.0, 3.0, 1.25),
            ))]),
            ..test_scene()
        };
        scene.room.open_faces = vec![Face::XNeg];
        let frame = raycast_frame(&scene, 0).unwrap();
        let intr = scene.intrinsics.build().unwrap();
        assert_eq!(*frame.depth.get(intr.cx as u32, intr.cy as u32), 0.0);
        assert_eq!(*frame.sem.get(intr.cx as u32, intr.cy as u32), 0);
    }

    #[test]
    fn depth_consistency_against_surfaces() {
        // Unprojecting a rendered depth lands on the hit primitive.
        let scene = test_scene();
        let frame = raycast_frame(&scene, 2).unwrap();
        let intr = scene.intrinsics.build().unwrap();
        let mut checked = 0;
        for v in (0..intr.height).step_by(7) {
            for u in (0..intr.width).step_by(7) {
                let Some(d) = frame.depth_at(u, v) else {
                    continue;
                };
                let p = unproject(Pixel::new(u, v), d, &intr, &frame.pose).unwrap();
                let residual = surface_residual(&scene, &p, *frame.sem.get(u, v), *frame.inst.get(u, v));
                assert!(residual < 1e-6, "residual {} at ({}, {})", residual, u, v);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    /// Distance from a point to the closest face plane of a box,
    /// clamped to the face rectangles.
    fn box_surface_distance(p: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..3 {
            for plane in [min[a], max[a]] {
                let mut q = *p;
                q[a] = plane;
                let clamped = Vector3::new(
                    q.x.clamp(min.x, max.x),
                    q.y.clamp(min.y, max.y),
                    q.z.clamp(min.z, max.z),
                );
                best = best.min((p - clamped).norm());
            }
        }
        best
    }

    fn surface_residual(scene: &SceneSpec, p: &Vector3<f64>, class: ClassId, inst: LocalInstanceId) -> f64 {
        if inst > 0 {
            let obj = scene
                .objects
                .iter()
                .find(|o| o.instance_id == inst)
                .expect("instance exists");
            match &obj.shape {
                Shape::Box { min, max } => box_surface_distance(p, &Vector3::from(*min), &Vector3::from(*max)),
                Shape::Sphere { center, radius } => {
                    ((p - Vector3::from(*center)).norm() - radius).abs()
                }
            }
        } else {
            // Room face of that class: minimum distance over matching
            // planes.
            let rmin = scene.room.min;
            let rmax = scene.room.max;
            let mut best = f64::INFINITY;
            for face in ALL_FACES {
                if scene.room.is_open(face) || scene.room.face_class(face) != class {
                    continue;
                }
                let d = match face {
                    Face::XNeg => (p.x - rmin[0]).abs(),
                    Face::XPos => (p.x - rmax[0]).abs(),
                    Face::YNeg => (p.y - rmin[1]).abs(),
                    Face::YPos => (p.y - rmax[1]).abs(),
                    Face::Floor => (p.z - rmin[2]).abs(),
                    Face::Ceiling => (p.z - rmax[2]).abs(),
                };
                best = best.min(d);
            }
            best
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let scene = test_scene();
        let frame = raycast_frame(&scene, 0).unwrap();
        let noisy = apply_noise(&frame, &NoiseSpec::none());
        assert_eq!(frame, noisy);
    }

    #[test]
    fn flip_fraction_matches_probability() {
        let scene = test_scene();
        let frame = raycast_frame(&scene, 0).unwrap();
        let noise = NoiseSpec {
            sem_flip_prob: 0.2,
            confusions: vec![(1, 2), (2, 1), (4, 5), (5, 4)],
            seed: 99,
            ..NoiseSpec::none()
        };
        let noisy = apply_noise(&frame, &noise);
        let mut eligible = 0usize;
        let mut flipped = 0usize;
        for (a, b) in frame.sem.data().iter().zip(noisy.sem.data()) {
            if noise.confusion_of(*a).is_some() {
                eligible += 1;
                if a != b {
                    flipped += 1;
                }
            }
        }
        assert!(eligible > 5000);
        let p = flipped as f64 / eligible as f64;
        let sigma = (0.2f64 * 0.8 / eligible as f64).sqrt();
        assert!((p - 0.2).abs() < 3.0 * sigma + 1e-3, "flip rate {}", p);
        // Flipped pixels carry the lowered score.
        for i in 0..frame.sem.len() {
            if frame.sem.data()[i] != noisy.sem.data()[i] {
                assert_eq!(noisy.sem_score.data()[i], FLIPPED_SCORE);
            }
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let scene = test_scene();
        let frame = raycast_frame(&scene, 1).unwrap();
        let noise = NoiseSpec {
            depth_sigma_at_1m: 0.01,
            sem_flip_prob: 0.1,
            confusions: vec![(1, 2)],
            border_erode_px: 1,
            seed: 7,
        };
        let a = apply_noise(&frame, &noise);
        let b = apply_noise(&frame, &noise);
        assert_eq!(a, b);
        let other = apply_noise(
            &frame,
            &NoiseSpec {
                seed: 8,
                ..noise.clone()
            },
        );
        assert_ne!(a, other);
    }

    #[test]
    fn erosion_shrinks_instances() {
        let scene = test_scene();
        let frame = raycast_frame(&scene, 0).unwrap();
        let noise = NoiseSpec {
            border_erode_px: 2,
            ..NoiseSpec::none()
        };
        let noisy = apply_noise(&frame, &noise);
        let before = frame.inst.data().iter().filter(|&&z| z > 0).count();
        let after = noisy.inst.data().iter().filter(|&&z| z > 0).count();
        assert!(after < before);
        // Erosion only clears, never creates.
        for (a, b) in frame.inst.data().iter().zip(noisy.inst.data()) {
            assert!(*b == 0 || b == a);
        }
    }

    #[test]
    fn cloud_density_and_labels() {
        // A 1 m x 1 m x 1 m box has six 1 m^2 faces.
        let scene = SceneSpec {
            room: RoomSpec {
                min: [0.0, 0.0, 0.0],
                max: [10.0, 10.0, 10.0],
                wall_class: 1,
                floor_class: 2,
                ceiling_class: 3,
                open_faces: ALL_FACES.to_vec(),
            },
            objects: vec![ObjectSpec {
                shape: Shape::Box {
                    min: [4.0, 4.0, 4.0],
                    max: [5.0, 5.0, 5.0],
                },
                class_id: 4,
                instance_id: 1,
            }],
            trajectory: Trajectory::Orbit {
                center: [5.0, 5.0, 5.0],
                radius: 3.0,
                height: 0.0,
                frames: 1,
            },
            intrinsics: IntrinsicsSpec {
                fx: 80.0,
                fy: 80.0,
                cx: 40.0,
                cy: 30.0,
                width: 80,
                height: 60,
            },
        };
        let cloud = sample_gt_cloud(&scene, 100.0, 1).unwrap();
        assert_eq!(cloud.points.len(), 600);
        assert!(cloud.points.iter().all(|p| p.class_id == 4 && p.instance_id == 1));
    }

    #[test]
    fn cloud_instances_and_residuals() {
        let scene = test_scene();
        let cloud = sample_gt_cloud(&scene, 50.0, 5).unwrap();
        let ids: std::collections::BTreeSet<u64> = cloud
            .points
            .iter()
            .filter(|p| p.instance_id > 0)
            .map(|p| p.instance_id)
            .collect();
        assert_eq!(ids.len(), 2);
        for p in &cloud.points {
            let inst = p.instance_id as LocalInstanceId;
            let residual = surface_residual(&scene, &p.position, p.class_id, inst);
            assert!(residual < 1e-9);
        }
        // Determinism.
        let again = sample_gt_cloud(&scene, 50.0, 5).unwrap();
        assert_eq!(cloud, again);
    }
}
