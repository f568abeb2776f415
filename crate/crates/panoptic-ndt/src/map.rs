//! Octree-backed voxel store: occupancy log-odds plus an incremental
//! per-voxel Gaussian (the NDT), carrying the panoptic histograms.
//!
//! The octree is realized as a sparse index -> payload table with
//! implicit depth; `findnode` semantics are what the rest of the
//! pipeline relies on.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::classes::ClassTable;
use crate::histogram::{InstanceHistogram, SemanticHistogram};
use crate::propagation::PanopticLabel3D;

/// Log-odds applied to the endpoint voxel of a hit ray.
pub const LOG_ODDS_OCCUPIED: f64 = 0.85;
/// Log-odds applied to every voxel a ray passes through.
pub const LOG_ODDS_FREE: f64 = -0.4;
pub const LOG_ODDS_MIN: f64 = -2.0;
pub const LOG_ODDS_MAX: f64 = 3.5;

/// Minimum sample count for a voxel to expose a distribution.
pub const MIN_SHAPE_SAMPLES: u64 = 3;
/// Covariance regularization added at query time (m^2).
pub const SHAPE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("voxel size must be positive, got {0}")]
    BadVoxelSize(f64),
    #[error("point has non-finite coordinates")]
    NonFinitePoint,
    #[error("point ({0}, {1}, {2}) lies outside the target voxel")]
    PointOutsideVoxel(f64, f64, f64),
}

/// Integer lattice coordinates of a voxel at the map's resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelIndex {
    pub fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    /// Lattice cell containing `point` under the floor convention; the
    /// lattice is anchored at the world origin.
    pub fn of_point(point: &Vector3<f64>, voxel_size: f64) -> Result<Self, MapError> {
        if !(voxel_size > 0.0) {
            return Err(MapError::BadVoxelSize(voxel_size));
        }
        if !(point.x.is_finite() && point.y.is_finite() && point.z.is_finite()) {
            return Err(MapError::NonFinitePoint);
        }
        Ok(Self {
            ix: (point.x / voxel_size).floor() as i64,
            iy: (point.y / voxel_size).floor() as i64,
            iz: (point.z / voxel_size).floor() as i64,
        })
    }

    /// World-space minimum corner.
    pub fn min_corner(&self, voxel_size: f64) -> Vector3<f64> {
        Vector3::new(
            self.ix as f64 * voxel_size,
            self.iy as f64 * voxel_size,
            self.iz as f64 * voxel_size,
        )
    }

    /// World-space center.
    pub fn center(&self, voxel_size: f64) -> Vector3<f64> {
        self.min_corner(voxel_size) + Vector3::repeat(voxel_size * 0.5)
    }

    pub fn contains(&self, point: &Vector3<f64>, voxel_size: f64) -> bool {
        VoxelIndex::of_point(point, voxel_size).map_or(false, |i| i == *self)
    }

    /// The 26 face/edge/corner neighbors plus self.
    pub fn neighborhood(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        (-1..=1).flat_map(move |dx| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1).map(move |dz| VoxelIndex::new(self.ix + dx, self.iy + dy, self.iz + dz))
            })
        })
    }
}

/// Sufficient statistics of the per-voxel surface Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct NdtShape {
    n: u64,
    sum: Vector3<f64>,
    sqsum: Matrix3<f64>,
}

impl Default for NdtShape {
    fn default() -> Self {
        Self {
            n: 0,
            sum: Vector3::zeros(),
            sqsum: Matrix3::zeros(),
        }
    }
}

impl NdtShape {
    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn sum(&self) -> &Vector3<f64> {
        &self.sum
    }

    pub fn sqsum(&self) -> &Matrix3<f64> {
        &self.sqsum
    }

    pub fn add_point(&mut self, p: &Vector3<f64>) {
        self.n += 1;
        self.sum += p;
        self.sqsum += p * p.transpose();
    }

    pub fn mean(&self) -> Option<Vector3<f64>> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    /// Sample covariance (divides by n-1); None below two samples.
    pub fn covariance(&self) -> Option<Matrix3<f64>> {
        if self.n < 2 {
            return None;
        }
        let n = self.n as f64;
        let mu = self.sum / n;
        Some((self.sqsum - n * mu * mu.transpose()) / (n - 1.0))
    }

    pub fn has_valid_distribution(&self) -> bool {
        self.n >= MIN_SHAPE_SAMPLES
    }

    /// Regularized (mean, covariance) once enough samples accumulated.
    pub fn distribution(&self) -> Option<(Vector3<f64>, Matrix3<f64>)> {
        if !self.has_valid_distribution() {
            return None;
        }
        let mu = self.mean()?;
        let sigma = self.covariance()? + Matrix3::identity() * SHAPE_EPSILON;
        Some((mu, sigma))
    }

    /// Deserialization path: raw statistics as stored.
    pub fn from_raw(n: u64, sum: Vector3<f64>, sqsum: Matrix3<f64>) -> Self {
        Self { n, sum, sqsum }
    }
}

/// Cached propagated label with the frame stamp it was computed at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CachedLabel {
    pub label: PanopticLabel3D,
    pub stamp: u64,
}

/// Payload of one octree voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct NdtVoxel {
    pub shape: NdtShape,
    logodds: f64,
    pub sem: SemanticHistogram,
    pub inst: InstanceHistogram,
    /// Number of semantic-histogram increments ever applied.
    pub n_sem: u64,
    /// Number of instance-histogram increments ever applied.
    pub n_inst: u64,
    cached_label: Option<CachedLabel>,
}

impl NdtVoxel {
    pub fn new(num_classes: usize) -> Self {
        Self {
            shape: NdtShape::default(),
            logodds: 0.0,
            sem: SemanticHistogram::new(num_classes),
            inst: InstanceHistogram::new(),
            n_sem: 0,
            n_inst: 0,
            cached_label: None,
        }
    }

    pub fn log_odds(&self) -> f64 {
        self.logodds
    }

    pub fn set_log_odds(&mut self, value: f64) {
        self.logodds = value.clamp(LOG_ODDS_MIN, LOG_ODDS_MAX);
    }

    fn add_log_odds(&mut self, delta: f64) {
        self.set_log_odds(self.logodds + delta);
    }

    /// Fold a point into the shape statistics, verifying it falls in
    /// this voxel's bounds. A violation indicates a caller bug.
    pub fn integrate_point(
        &mut self,
        index: VoxelIndex,
        voxel_size: f64,
        point: &Vector3<f64>,
    ) -> Result<(), MapError> {
        if !index.contains(point, voxel_size) {
            return Err(MapError::PointOutsideVoxel(point.x, point.y, point.z));
        }
        self.shape.add_point(point);
        Ok(())
    }

    pub fn record_semantic_increment(&mut self) {
        self.n_sem += 1;
        self.cached_label = None;
    }

    pub fn record_instance_increment(&mut self) {
        self.n_inst += 1;
        self.cached_label = None;
    }

    pub fn invalidate_label(&mut self) {
        self.cached_label = None;
    }

    pub fn cached_label(&self) -> Option<&CachedLabel> {
        self.cached_label.as_ref()
    }

    pub fn store_label(&mut self, label: PanopticLabel3D, stamp: u64) {
        self.cached_label = Some(CachedLabel { label, stamp });
    }
}

/// The map: voxel payloads over a sparse lattice plus the global
/// instance id allocator and the class table every histogram refers to.
#[derive(Debug, Clone)]
pub struct PanopticMap {
    voxel_size: f64,
    cells: HashMap<VoxelIndex, NdtVoxel>,
    next_global_id: u64,
    class_table: ClassTable,
    frame_counter: u64,
}

impl PanopticMap {
    pub fn new(voxel_size: f64, class_table: ClassTable) -> Result<Self, MapError> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(MapError::BadVoxelSize(voxel_size));
        }
        Ok(Self {
            voxel_size,
            cells: HashMap::new(),
            next_global_id: 1,
            class_table,
            frame_counter: 0,
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn class_table(&self) -> &ClassTable {
        &self.class_table
    }

    pub fn num_voxels(&self) -> usize {
        self.cells.len()
    }

    pub fn frame_counter(&self) -> u64 {
        self.frame_counter
    }

    pub fn advance_frame(&mut self) {
        self.frame_counter += 1;
    }

    pub fn next_global_id(&self) -> u64 {
        self.next_global_id
    }

    /// newz: hand out the next globally unique instance id.
    pub fn alloc_global_id(&mut self) -> u64 {
        let id = self.next_global_id;
        self.next_global_id += 1;
        id
    }

    pub fn voxel_index(&self, point: &Vector3<f64>) -> Result<VoxelIndex, MapError> {
        VoxelIndex::of_point(point, self.voxel_size)
    }

    /// findnode: voxel containing a world point, if allocated.
    pub fn findnode(&self, point: &Vector3<f64>) -> Option<&NdtVoxel> {
        let idx = VoxelIndex::of_point(point, self.voxel_size).ok()?;
        self.cells.get(&idx)
    }

    pub fn voxel(&self, index: VoxelIndex) -> Option<&NdtVoxel> {
        self.cells.get(&index)
    }

    pub fn voxel_mut(&mut self, index: VoxelIndex) -> Option<&mut NdtVoxel> {
        self.cells.get_mut(&index)
    }

    pub fn voxel_or_insert(&mut self, index: VoxelIndex) -> &mut NdtVoxel {
        let classes = self.class_table.len();
        self.cells
            .entry(index)
            .or_insert_with(|| NdtVoxel::new(classes))
    }

    /// Fold a world point into the shape statistics of its voxel,
    /// allocating the voxel on first touch. Returns the voxel index.
    pub fn integrate_point(&mut self, point: &Vector3<f64>) -> Result<VoxelIndex, MapError> {
        let index = self.voxel_index(point)?;
        let size = self.voxel_size;
        self.voxel_or_insert(index)
            .integrate_point(index, size, point)?;
        Ok(index)
    }

    /// Carve free space along origin -> endpoint and, for hit rays,
    /// reinforce the endpoint voxel. Zero-length rays are a no-op.
    pub fn update_occupancy(
        &mut self,
        origin: &Vector3<f64>,
        endpoint: &Vector3<f64>,
        is_hit: bool,
    ) {
        if origin == endpoint {
            return;
        }
        let (Ok(start), Ok(end)) = (self.voxel_index(origin), self.voxel_index(endpoint)) else {
            return;
        };
        for index in traverse_ray(origin, endpoint, start, end, self.voxel_size) {
            self.voxel_or_insert(index).add_log_odds(LOG_ODDS_FREE);
        }
        if is_hit {
            self.voxel_or_insert(end).add_log_odds(LOG_ODDS_OCCUPIED);
        }
    }

    /// Regularized (mean, covariance) of a voxel, if it has one.
    pub fn voxel_distribution(&self, index: VoxelIndex) -> Option<(Vector3<f64>, Matrix3<f64>)> {
        self.cells.get(&index)?.shape.distribution()
    }

    /// Apply one semantic-histogram increment with its counter update.
    /// Unallocated indices are ignored.
    pub fn add_semantic_observation(
        &mut self,
        index: VoxelIndex,
        class_id: crate::classes::ClassId,
        score: f64,
    ) -> Result<(), crate::histogram::HistogramError> {
        if let Some(voxel) = self.cells.get_mut(&index) {
            voxel.sem.add(class_id, score, &self.class_table)?;
            voxel.record_semantic_increment();
        }
        Ok(())
    }

    /// Apply one instance-histogram increment with its counter update.
    /// Unallocated indices are ignored.
    pub fn add_instance_observation(
        &mut self,
        index: VoxelIndex,
        global_id: u64,
        score: f64,
    ) -> Result<(), crate::histogram::HistogramError> {
        if let Some(voxel) = self.cells.get_mut(&index) {
            voxel.inst.add(global_id, score)?;
            voxel.record_instance_increment();
        }
        Ok(())
    }

    /// Deterministic ascending traversal order for export and
    /// serialization.
    pub fn sorted_indices(&self) -> Vec<VoxelIndex> {
        let mut v: Vec<VoxelIndex> = self.cells.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelIndex, &NdtVoxel)> {
        self.cells.iter()
    }

    /// Total instance-histogram mass per global id over the whole map.
    pub fn instance_mass(&self) -> HashMap<u64, f64> {
        let mut out = HashMap::new();
        for voxel in self.cells.values() {
            for entry in voxel.inst.entries() {
                *out.entry(entry.id).or_insert(0.0) += entry.mass;
            }
        }
        out
    }

    /// Deserialization hooks.
    pub fn set_next_global_id(&mut self, id: u64) {
        self.next_global_id = id;
    }

    pub fn insert_voxel(&mut self, index: VoxelIndex, voxel: NdtVoxel) {
        self.cells.insert(index, voxel);
    }
}

/// Integer-lattice voxels crossed by the segment, excluding the
/// endpoint voxel. Amanatides-Woo stepping; ties prefer x, then y.
fn traverse_ray(
    origin: &Vector3<f64>,
    endpoint: &Vector3<f64>,
    start: VoxelIndex,
    end: VoxelIndex,
    voxel_size: f64,
) -> Vec<VoxelIndex> {
    let mut out = Vec::new();
    if start == end {
        return out;
    }
    let dir = endpoint - origin;
    let mut current = [start.ix, start.iy, start.iz];
    let target = [end.ix, end.iy, end.iz];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for axis in 0..3 {
        let d = dir[axis];
        if d > 0.0 {
            step[axis] = 1;
            let boundary = (current[axis] + 1) as f64 * voxel_size;
            t_max[axis] = (boundary - origin[axis]) / d;
            t_delta[axis] = voxel_size / d;
        } else if d < 0.0 {
            step[axis] = -1;
            let boundary = current[axis] as f64 * voxel_size;
            t_max[axis] = (boundary - origin[axis]) / d;
            t_delta[axis] = voxel_size / -d;
        }
    }
    // Every step moves one axis toward the target, so the step count
    // is bounded by the Manhattan distance.
    let max_steps = target
        .iter()
        .zip(&current)
        .map(|(t, c)| (t - c).unsigned_abs())
        .sum::<u64>();
    for _ in 0..max_steps {
        out.push(VoxelIndex::new(current[0], current[1], current[2]));
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        current[axis] += step[axis];
        t_max[axis] += t_delta[axis];
        if current == target {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::ClassKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn table() -> ClassTable {
        ClassTable::new(&[("wall", ClassKind::Stuff), ("chair", ClassKind::Thing)]).unwrap()
    }

    fn map(size: f64) -> PanopticMap {
        PanopticMap::new(size, table()).unwrap()
    }

    #[test]
    fn voxel_index_floor_convention() {
        let idx = |p: [f64; 3]| VoxelIndex::of_point(&Vector3::from(p), 0.1).unwrap();
        assert_eq!(idx([0.05, 0.05, 0.05]), VoxelIndex::new(0, 0, 0));
        assert_eq!(idx([-0.05, 0.0, 0.0]), VoxelIndex::new(-1, 0, 0));
        // Boundary point belongs to the upper voxel.
        assert_eq!(idx([0.1, 0.1, 0.1]), VoxelIndex::new(1, 1, 1));
    }

    #[test]
    fn voxel_index_rejects_bad_input() {
        assert_eq!(
            VoxelIndex::of_point(&Vector3::new(f64::NAN, 0.0, 0.0), 0.1),
            Err(MapError::NonFinitePoint)
        );
        assert_eq!(
            VoxelIndex::of_point(&Vector3::zeros(), 0.0),
            Err(MapError::BadVoxelSize(0.0))
        );
    }

    /// Two-pass batch estimate used as the oracle for the incremental path.
    pub(crate) fn batch_mean_cov(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
        let n = points.len() as f64;
        let mean = points.iter().sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - mean;
            cov += d * d.transpose();
        }
        (mean, cov / (n - 1.0))
    }

    #[test]
    fn integrate_collinear_points() {
        let mut m = map(100.0);
        for x in [0.0, 1.0, 2.0] {
            m.integrate_point(&Vector3::new(x, 0.0, 0.0)).unwrap();
        }
        let v = m.findnode(&Vector3::new(0.5, 0.0, 0.0)).unwrap();
        assert_relative_eq!(v.shape.mean().unwrap(), Vector3::new(1.0, 0.0, 0.0));
        let cov = v.shape.covariance().unwrap();
        assert_relative_eq!(cov[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(cov[(1, 1)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(cov[(2, 2)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(cov[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn integrate_single_point() {
        let mut m = map(1.0);
        let p = Vector3::new(0.25, 0.5, 0.75);
        m.integrate_point(&p).unwrap();
        let v = m.findnode(&p).unwrap();
        assert_relative_eq!(v.shape.mean().unwrap(), p);
        assert!(v.shape.covariance().is_none());
        assert!(!v.shape.has_valid_distribution());
    }

    #[test]
    fn integrate_matches_batch_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let points: Vec<Vector3<f64>> = (0..1000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..10.0),
                )
            })
            .collect();
        let mut m = map(10.0);
        for p in &points {
            m.integrate_point(p).unwrap();
        }
        let v = m.findnode(&Vector3::new(5.0, 5.0, 5.0)).unwrap();
        let (bm, bc) = batch_mean_cov(&points);
        let mean = v.shape.mean().unwrap();
        let cov = v.shape.covariance().unwrap();
        assert!((mean - bm).amax() <= 1e-9 * bm.amax().max(1.0));
        assert!((cov - bc).amax() <= 1e-9 * bc.amax().max(1.0));
    }

    #[test]
    fn integrate_point_outside_voxel_rejected() {
        let mut v = NdtVoxel::new(3);
        let idx = VoxelIndex::new(0, 0, 0);
        let err = v
            .integrate_point(idx, 1.0, &Vector3::new(1.5, 0.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, MapError::PointOutsideVoxel(..)));
        assert_eq!(v.shape.count(), 0);
    }

    #[test]
    fn occupancy_single_hit_ray() {
        let mut m = map(0.1);
        let origin = Vector3::new(0.05, 0.05, 0.05);
        let endpoint = Vector3::new(0.55, 0.05, 0.05);
        m.update_occupancy(&origin, &endpoint, true);
        let hit = m.findnode(&endpoint).unwrap();
        assert_relative_eq!(hit.log_odds(), LOG_ODDS_OCCUPIED);
        for i in 0..5 {
            let p = Vector3::new(0.05 + i as f64 * 0.1, 0.05, 0.05);
            assert_relative_eq!(m.findnode(&p).unwrap().log_odds(), LOG_ODDS_FREE);
        }
    }

    #[test]
    fn occupancy_clamps_at_max() {
        let mut m = map(0.1);
        let origin = Vector3::new(0.05, 0.05, 0.05);
        let endpoint = Vector3::new(0.25, 0.05, 0.05);
        for _ in 0..5 {
            m.update_occupancy(&origin, &endpoint, true);
        }
        assert_relative_eq!(m.findnode(&endpoint).unwrap().log_odds(), LOG_ODDS_MAX);
    }

    #[test]
    fn occupancy_hit_then_misses() {
        let mut m = map(0.1);
        let origin = Vector3::new(0.05, 0.05, 0.05);
        let target = Vector3::new(0.35, 0.05, 0.05);
        m.update_occupancy(&origin, &target, true);
        // Four rays that pass through the target voxel.
        let beyond = Vector3::new(0.75, 0.05, 0.05);
        for _ in 0..4 {
            m.update_occupancy(&origin, &beyond, false);
        }
        assert_relative_eq!(
            m.findnode(&target).unwrap().log_odds(),
            0.85 - 4.0 * 0.4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn occupancy_zero_length_noop() {
        let mut m = map(0.1);
        let p = Vector3::new(0.05, 0.05, 0.05);
        m.update_occupancy(&p, &p, true);
        assert_eq!(m.num_voxels(), 0);
    }

    #[test]
    fn distribution_needs_three_samples() {
        let mut m = map(1.0);
        m.integrate_point(&Vector3::new(0.1, 0.1, 0.1)).unwrap();
        m.integrate_point(&Vector3::new(0.2, 0.2, 0.2)).unwrap();
        let idx = VoxelIndex::new(0, 0, 0);
        assert!(m.voxel_distribution(idx).is_none());
        m.integrate_point(&Vector3::new(0.3, 0.3, 0.3)).unwrap();
        assert!(m.voxel_distribution(idx).is_some());
    }

    #[test]
    fn distribution_regularizes_degenerate_covariance() {
        let mut m = map(100.0);
        for x in [0.0, 1.0, 2.0] {
            m.integrate_point(&Vector3::new(x, 0.0, 0.0)).unwrap();
        }
        let (_, sigma) = m.voxel_distribution(VoxelIndex::new(0, 0, 0)).unwrap();
        assert_relative_eq!(sigma[(0, 0)], 1.0 + SHAPE_EPSILON, epsilon = 1e-12);
        assert_relative_eq!(sigma[(1, 1)], SHAPE_EPSILON, epsilon = 1e-12);
        assert_relative_eq!(sigma[(2, 2)], SHAPE_EPSILON, epsilon = 1e-12);
    }

    #[test]
    fn distribution_epsilon_close_to_batch() {
        let mut rng = StdRng::seed_from_u64(21);
        let points: Vec<Vector3<f64>> = (0..1000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(2.0..3.0),
                    rng.random_range(2.0..3.0),
                    rng.random_range(2.0..3.0),
                )
            })
            .collect();
        let mut m = map(10.0);
        for p in &points {
            m.integrate_point(p).unwrap();
        }
        let (_, sigma) = m
            .voxel_distribution(VoxelIndex::new(0, 0, 0))
            .unwrap();
        let (_, bc) = batch_mean_cov(&points);
        assert!((sigma - bc).amax() <= SHAPE_EPSILON + 1e-12);
    }

    #[test]
    fn alloc_global_ids_monotonic() {
        let mut m = map(0.1);
        assert_eq!(m.alloc_global_id(), 1);
        assert_eq!(m.alloc_global_id(), 2);
        assert_eq!(m.alloc_global_id(), 3);
        assert_eq!(m.next_global_id(), 4);
    }

    proptest! {
        #[test]
        fn octree_findnode_consistency(points in proptest::collection::vec(
            (-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0), 1..100), size in 0.05f64..1.0)
        {
            let mut m = map(size);
            for (x, y, z) in points {
                m.integrate_point(&Vector3::new(x, y, z)).unwrap();
            }
            for idx in m.sorted_indices() {
                let center = idx.center(size);
                let found = m.voxel_index(&center).unwrap();
                prop_assert_eq!(found, idx);
                prop_assert!(m.findnode(&center).is_some());
            }
        }

        #[test]
        fn occupancy_stays_in_bounds(rays in proptest::collection::vec(
            ((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
             (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), any::<bool>()), 1..60))
        {
            let mut m = map(0.1);
            for ((ox, oy, oz), (ex, ey, ez), hit) in rays {
                m.update_occupancy(&Vector3::new(ox, oy, oz), &Vector3::new(ex, ey, ez), hit);
            }
            for (_, v) in m.iter() {
                prop_assert!(v.log_odds() >= LOG_ODDS_MIN && v.log_odds() <= LOG_ODDS_MAX);
            }
        }

        #[test]
        fn incremental_matches_batch(seed in 0u64..500, n in 3usize..400) {
            let mut rng = StdRng::seed_from_u64(seed);
            let cx = rng.random_range(-10.0..10.0);
            let points: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(
                    cx + rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ))
                .collect();
            let mut shape = NdtShape::default();
            for p in &points {
                shape.add_point(p);
            }
            let (bm, bc) = batch_mean_cov(&points);
            let mean = shape.mean().unwrap();
            let cov = shape.covariance().unwrap();
            prop_assert!((mean - bm).amax() <= 1e-9 * bm.amax().max(1.0));
            prop_assert!((cov - bc).amax() <= 1e-9 * bc.amax().max(1.0));
        }

        #[test]
        fn permutation_invariance(seed in 0u64..200) {
            let mut rng = StdRng::seed_from_u64(seed);
            let n = rng.random_range(3..500);
            let points: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ))
                .collect();
            let mut forward = NdtShape::default();
            for p in &points {
                forward.add_point(p);
            }
            let mut backward = NdtShape::default();
            for p in points.iter().rev() {
                backward.add_point(p);
            }
            let (fm, fc) = (forward.mean().unwrap(), forward.covariance().unwrap());
            let (bm, bc) = (backward.mean().unwrap(), backward.covariance().unwrap());
            prop_assert!((fm - bm).amax() <= 1e-10 * bm.amax().max(1.0));
            prop_assert!((fc - bc).amax() <= 1e-10 * bc.amax().max(1.0));
        }
    }
}
