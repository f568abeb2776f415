//! Scoring maps against ground truth, in 3D via Mahalanobis
//! point-to-voxel matching and in 2D via rendered back-projections.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Cholesky, Vector3};

use crate::classes::{ClassId, ClassKind, VOID_CLASS};
use crate::frame::{merge_panoptic, PanopticFrame};
use crate::map::PanopticMap;
use crate::params::MapParams;
use crate::propagation::{export_labels, propagate_label, PanopticLabel3D};
use crate::renderer::render_view;

/// One annotated ground-truth point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtPoint {
    pub position: Vector3<f64>,
    pub class_id: ClassId,
    pub instance_id: u64,
}

/// Annotated point cloud used by the 3D evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthCloud {
    pub points: Vec<GtPoint>,
}

/// Label a map assigns to a ground-truth point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLabel {
    /// Semantic-only argmax of the winning voxel.
    pub semantic_class: ClassId,
    /// Propagated panoptic label of the winning voxel.
    pub panoptic: PanopticLabel3D,
}

/// Assign every point the label of the voxel minimizing the
/// Mahalanobis distance among its containing voxel and the 26
/// neighbors. Points with no valid candidate distribution stay
/// unknown.
pub fn match_points_3d(
    map: &PanopticMap,
    cloud: &GroundTruthCloud,
    params: &MapParams,
) -> Vec<Option<PointLabel>> {
    let table = map.class_table();
    cloud
        .points
        .iter()
        .map(|point| {
            let center = map.voxel_index(&point.position).ok()?;
            let mut best: Option<(f64, PointLabel)> = None;
            for candidate in center.neighborhood() {
                let Some(voxel) = map.voxel(candidate) else {
                    continue;
                };
                let Some((mean, cov)) = voxel.shape.distribution() else {
                    continue;
                };
                let Some(chol) = Cholesky::new(cov) else {
                    continue;
                };
                let diff = point.position - mean;
                let d2 = diff.dot(&chol.solve(&diff));
                if best.as_ref().is_none_or(|(b, _)| d2 < *b) {
                    let panoptic = propagate_label(voxel, table, params.theta_st, params.theta_o);
                    let semantic_class = voxel.sem.argmax().unwrap_or(VOID_CLASS);
                    best = Some((
                        d2,
                        PointLabel {
                            semantic_class,
                            panoptic,
                        },
                    ));
                }
            }
            best.map(|(_, label)| label)
        })
        .collect()
}

/// Confusion-matrix accumulator for mIoU. Void ground truth is
/// excluded from scoring; a void prediction on labeled ground truth
/// counts as a false negative of the ground-truth class.
#[derive(Debug, Clone, Default)]
pub struct ConfusionAccumulator {
    tp: BTreeMap<ClassId, usize>,
    fp: BTreeMap<ClassId, usize>,
    fn_: BTreeMap<ClassId, usize>,
    gt_present: std::collections::BTreeSet<ClassId>,
}

impl ConfusionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: ClassId, gt: ClassId) {
        if gt == VOID_CLASS {
            return;
        }
        self.gt_present.insert(gt);
        if pred == gt {
            *self.tp.entry(gt).or_insert(0) += 1;
        } else {
            *self.fn_.entry(gt).or_insert(0) += 1;
            if pred != VOID_CLASS {
                *self.fp.entry(pred).or_insert(0) += 1;
            }
        }
    }

    /// Per-class IoU and the mean over classes present in the ground
    /// truth; 0 when no class is present.
    pub fn finish(&self) -> (BTreeMap<ClassId, f64>, f64) {
        let mut per_class = BTreeMap::new();
        for &c in &self.gt_present {
            let tp = *self.tp.get(&c).unwrap_or(&0) as f64;
            let fp = *self.fp.get(&c).unwrap_or(&0) as f64;
            let fn_ = *self.fn_.get(&c).unwrap_or(&0) as f64;
            let denom = tp + fp + fn_;
            per_class.insert(c, if denom > 0.0 { tp / denom } else { 0.0 });
        }
        let miou = if per_class.is_empty() {
            0.0
        } else {
            per_class.values().sum::<f64>() / per_class.len() as f64
        };
        (per_class, miou)
    }
}

/// Paired prediction/ground-truth labels to per-class IoU and mIoU.
pub fn semantic_miou(pred: &[ClassId], gt: &[ClassId]) -> (BTreeMap<ClassId, f64>, f64) {
    assert_eq!(pred.len(), gt.len());
    let mut acc = ConfusionAccumulator::new();
    for (&p, &g) in pred.iter().zip(gt) {
        acc.add(p, g);
    }
    acc.finish()
}

/// One segment of a panoptic segmentation: a class plus its support as
/// sorted element indices (pixels of one view, or cloud point ids).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub class_id: ClassId,
    pub support: Vec<u32>,
}

impl Segment {
    pub fn new(class_id: ClassId, mut support: Vec<u32>) -> Self {
        support.sort_unstable();
        support.dedup();
        Self { class_id, support }
    }
}

fn sorted_iou(a: &[u32], b: &[u32]) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut inter = 0usize;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PqClassStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub iou_sum: f64,
}

impl PqClassStats {
    pub fn pq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom > 0.0 {
            self.iou_sum / denom
        } else {
            0.0
        }
    }

    pub fn sq(&self) -> f64 {
        if self.tp > 0 {
            self.iou_sum / self.tp as f64
        } else {
            0.0
        }
    }

    pub fn rq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom > 0.0 {
            self.tp as f64 / denom
        } else {
            0.0
        }
    }
}

/// Multi-view panoptic-quality accumulator: per-class TP/FP/FN and
/// matched-IoU sums are pooled globally, then scored once.
#[derive(Debug, Clone, Default)]
pub struct PqAccumulator {
    pub per_class: BTreeMap<ClassId, PqClassStats>,
}

impl PqAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Match one view's segments. Segments match iff they share the
    /// class and overlap with IoU > 0.5, which makes the matching
    /// unique on disjoint segmentations.
    pub fn add_view(&mut self, pred: &[Segment], gt: &[Segment]) {
        let mut gt_matched = vec![false; gt.len()];
        for p in pred {
            let mut matched = false;
            for (gi, g) in gt.iter().enumerate() {
                if g.class_id != p.class_id {
                    continue;
                }
                let iou = sorted_iou(&p.support, &g.support);
                if iou > 0.5 {
                    assert!(!gt_matched[gi], "IoU > 0.5 matches must be unique");
                    assert!(!matched, "IoU > 0.5 matches must be unique");
                    gt_matched[gi] = true;
                    matched = true;
                    let stats = self.per_class.entry(p.class_id).or_default();
                    stats.tp += 1;
                    stats.iou_sum += iou;
                }
            }
            if !matched {
                self.per_class.entry(p.class_id).or_default().fp += 1;
            }
        }
        for (gi, g) in gt.iter().enumerate() {
            if !gt_matched[gi] {
                self.per_class.entry(g.class_id).or_default().fn_ += 1;
            }
        }
    }

    /// Per-class and mean PQ/SQ/RQ over classes with any segment.
    pub fn finish(&self) -> PqResult {
        let mut per_class = BTreeMap::new();
        let (mut pq, mut sq, mut rq) = (0.0, 0.0, 0.0);
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&c, stats) in &self.per_class {
            per_class.insert(c, *stats);
            pq += stats.pq();
            sq += stats.sq();
            rq += stats.rq();
            tp += stats.tp;
            fp += stats.fp;
            fn_ += stats.fn_;
        }
        let n = per_class.len().max(1) as f64;
        let any = !per_class.is_empty();
        PqResult {
            per_class,
            pq: if any { pq / n } else { 0.0 },
            sq: if any { sq / n } else { 0.0 },
            rq: if any { rq / n } else { 0.0 },
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PqResult {
    pub per_class: BTreeMap<ClassId, PqClassStats>,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Single-view panoptic quality.
pub fn panoptic_quality(pred: &[Segment], gt: &[Segment]) -> PqResult {
    let mut acc = PqAccumulator::new();
    acc.add_view(pred, gt);
    acc.finish()
}

/// One predicted instance for AP evaluation; `view` scopes the support
/// indices (detections never overlap across views).
#[derive(Debug, Clone)]
pub struct Detection {
    pub class_id: ClassId,
    pub confidence: f64,
    pub view: usize,
    pub support: Vec<u32>,
}

/// One ground-truth instance for AP evaluation.
#[derive(Debug, Clone)]
pub struct GtInstance {
    pub class_id: ClassId,
    pub view: usize,
    pub support: Vec<u32>,
}

/// AP at 50% overlap per thing class present in the ground truth, plus
/// the mean. Detections are greedily matched in confidence order to
/// unmatched same-class ground truth with IoU >= 0.5; the
/// precision-recall curve is integrated with all-point interpolation.
pub fn average_precision_50(
    detections: &[Detection],
    gt: &[GtInstance],
) -> (BTreeMap<ClassId, f64>, f64) {
    let gt_classes: std::collections::BTreeSet<ClassId> =
        gt.iter().map(|g| g.class_id).collect();
    let mut per_class = BTreeMap::new();
    for &class in gt_classes.iter() {
        let class_gt: Vec<(usize, &GtInstance)> = gt
            .iter()
            .enumerate()
            .filter(|(_, g)| g.class_id == class)
            .collect();
        let mut dets: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.class_id == class)
            .collect();
        dets.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());

        let mut matched = vec![false; class_gt.len()];
        let mut tps = Vec::with_capacity(dets.len());
        for d in &dets {
            let mut best: Option<(f64, usize)> = None;
            for (slot, (_, g)) in class_gt.iter().enumerate() {
                if matched[slot] || g.view != d.view {
                    continue;
                }
                let iou = sorted_iou(&d.support, &g.support);
                if iou >= 0.5 && best.as_ref().is_none_or(|(b, _)| iou > *b) {
                    best = Some((iou, slot));
                }
            }
            if let Some((_, slot)) = best {
                matched[slot] = true;
                tps.push(true);
            } else {
                tps.push(false);
            }
        }

        let total_gt = class_gt.len() as f64;
        let mut precisions = Vec::with_capacity(tps.len());
        let mut recalls = Vec::with_capacity(tps.len());
        let mut tp_cum = 0usize;
        for (k, &is_tp) in tps.iter().enumerate() {
            if is_tp {
                tp_cum += 1;
            }
            precisions.push(tp_cum as f64 / (k + 1) as f64);
            recalls.push(tp_cum as f64 / total_gt);
        }
        // All-point interpolation: running max of precision from the
        // right, integrated over recall steps.
        let mut ap = 0.0;
        let mut max_prec = 0.0f64;
        for k in (0..tps.len()).rev() {
            max_prec = max_prec.max(precisions[k]);
            let r_prev = if k == 0 { 0.0 } else { recalls[k - 1] };
            ap += (recalls[k] - r_prev) * max_prec;
        }
        per_class.insert(class, ap);
    }
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    (per_class, mean)
}

/// Aggregate report of one evaluation run.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub per_class_iou: BTreeMap<ClassId, f64>,
    pub miou: f64,
    pub miou_p: f64,
    pub pq_result: PqResult,
    pub ap50_per_class: BTreeMap<ClassId, f64>,
    pub ap50: f64,
    pub matched_fraction: f64,
}

impl EvalReport {
    /// Flat key-value records, one per line.
    pub fn records(&self, table: &crate::classes::ClassTable) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "miou {:.6}", self.miou);
        let _ = writeln!(s, "miou_p {:.6}", self.miou_p);
        let _ = writeln!(s, "pq {:.6}", self.pq_result.pq);
        let _ = writeln!(s, "sq {:.6}", self.pq_result.sq);
        let _ = writeln!(s, "rq {:.6}", self.pq_result.rq);
        let _ = writeln!(s, "ap50 {:.6}", self.ap50);
        let _ = writeln!(s, "matched_fraction {:.6}", self.matched_fraction);
        let _ = writeln!(s, "tp {}", self.pq_result.tp);
        let _ = writeln!(s, "fp {}", self.pq_result.fp);
        let _ = writeln!(s, "fn {}", self.pq_result.fn_);
        for (c, iou) in &self.per_class_iou {
            let name = table.name(*c).unwrap_or("unknown");
            let _ = writeln!(s, "iou.{} {:.6}", name, iou);
        }
        for (c, stats) in &self.pq_result.per_class {
            let name = table.name(*c).unwrap_or("unknown");
            let _ = writeln!(s, "pq.{} {:.6}", name, stats.pq());
            let _ = writeln!(s, "sq.{} {:.6}", name, stats.sq());
            let _ = writeln!(s, "rq.{} {:.6}", name, stats.rq());
        }
        for (c, ap) in &self.ap50_per_class {
            let name = table.name(*c).unwrap_or("unknown");
            let _ = writeln!(s, "ap50.{} {:.6}", name, ap);
        }
        s
    }
}

/// Extract panoptic segments from paired (class, instance) channels.
/// Things with an instance group by id; stuff classes form one segment
/// per class; thing pixels without an instance (garbage) group into
/// 4-connected regions when `width` is given, or one segment per class
/// otherwise.
fn extract_segments(
    classes: &[ClassId],
    instances: &[u64],
    table: &crate::classes::ClassTable,
    width: Option<u32>,
) -> Vec<Segment> {
    assert_eq!(classes.len(), instances.len());
    let mut by_instance: BTreeMap<(ClassId, u64), Vec<u32>> = BTreeMap::new();
    let mut by_stuff: BTreeMap<ClassId, Vec<u32>> = BTreeMap::new();
    let mut garbage: BTreeMap<ClassId, Vec<u32>> = BTreeMap::new();
    for (i, (&c, &z)) in classes.iter().zip(instances).enumerate() {
        if c == VOID_CLASS {
            continue;
        }
        match table.kind(c) {
            Some(ClassKind::Thing) if z > 0 => {
                by_instance.entry((c, z)).or_default().push(i as u32)
            }
            Some(ClassKind::Thing) => garbage.entry(c).or_default().push(i as u32),
            Some(ClassKind::Stuff) => by_stuff.entry(c).or_default().push(i as u32),
            _ => {}
        }
    }
    let mut out = Vec::new();
    for ((c, _), support) in by_instance {
        out.push(Segment::new(c, support));
    }
    for (c, support) in by_stuff {
        out.push(Segment::new(c, support));
    }
    for (c, support) in garbage {
        match width {
            Some(w) => {
                for region in connected_regions(&support, w, classes.len() as u32) {
                    out.push(Segment::new(c, region));
                }
            }
            None => out.push(Segment::new(c, support)),
        }
    }
    out
}

/// 4-connected regions of a pixel-index set on a raster of the given
/// width.
fn connected_regions(indices: &[u32], width: u32, len: u32) -> Vec<Vec<u32>> {
    let set: std::collections::HashSet<u32> = indices.iter().copied().collect();
    let mut visited: std::collections::HashSet<u32> = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &start in indices {
        if visited.contains(&start) {
            continue;
        }
        let mut region = Vec::new();
        let mut stack = vec![start];
        visited.insert(start);
        while let Some(i) = stack.pop() {
            region.push(i);
            let u = i % width;
            let mut neighbors = Vec::with_capacity(4);
            if u > 0 {
                neighbors.push(i - 1);
            }
            if u + 1 < width {
                neighbors.push(i + 1);
            }
            if i >= width {
                neighbors.push(i - width);
            }
            if i + width < len {
                neighbors.push(i + width);
            }
            for n in neighbors {
                if set.contains(&n) && visited.insert(n) {
                    stack.push(n);
                }
            }
        }
        region.sort_unstable();
        out.push(region);
    }
    out
}

/// Map-level instance confidences: accumulated histogram mass per
/// global id, normalized by the maximum.
fn instance_confidences(map: &PanopticMap) -> BTreeMap<u64, f64> {
    let mass = map.instance_mass();
    let max = mass.values().cloned().fold(0.0, f64::max);
    let mut out = BTreeMap::new();
    if max > 0.0 {
        for (id, m) in mass {
            out.insert(id, m / max);
        }
    }
    out
}

/// Render the map into every frame's camera and score the views
/// against the frames' labels.
pub fn evaluate_2d(
    map: &mut PanopticMap,
    frames: &[PanopticFrame],
    params: &MapParams,
) -> EvalReport {
    let table = map.class_table().clone();
    let exported = export_labels(map, params.theta_st, params.theta_o);
    let confidences = instance_confidences(map);

    let mut sem_acc = ConfusionAccumulator::new();
    let mut pan_acc = ConfusionAccumulator::new();
    let mut pq_acc = PqAccumulator::new();
    let mut detections = Vec::new();
    let mut gt_instances = Vec::new();
    let mut gt_labeled_pixels = 0usize;
    let mut covered_pixels = 0usize;

    for (frame_idx, frame) in frames.iter().enumerate() {
        let merged = merge_panoptic(&frame.sem, &frame.inst, &table)
            .expect("evaluation frames must carry valid classes");
        let view = render_view(&exported, &frame.intr, &frame.pose, params.k_sigma, params.max_depth);

        let gt_classes: Vec<ClassId> = merged.data().iter().map(|l| l.class_id).collect();
        let gt_inst: Vec<u64> = merged.data().iter().map(|l| l.instance_id as u64).collect();
        let pred_pan: Vec<ClassId> = view.pan_class.data().to_vec();
        let pred_inst: Vec<u64> = view.instance.data().to_vec();

        for (i, (&p, &g)) in view.sem.data().iter().zip(&gt_classes).enumerate() {
            sem_acc.add(p, g);
            pan_acc.add(pred_pan[i], g);
            if g != VOID_CLASS {
                gt_labeled_pixels += 1;
                if p != VOID_CLASS {
                    covered_pixels += 1;
                }
            }
        }

        let pred_segments = extract_segments(&pred_pan, &pred_inst, &table, Some(frame.width()));
        let gt_segments = extract_segments(&gt_classes, &gt_inst, &table, Some(frame.width()));
        pq_acc.add_view(&pred_segments, &gt_segments);

        for ((c, z), support) in group_instances(&pred_pan, &pred_inst, &table) {
            let confidence = confidences.get(&z).copied().unwrap_or(0.0);
            detections.push(Detection {
                class_id: c,
                confidence,
                view: frame_idx,
                support,
            });
        }
        for ((c, _), support) in group_instances(&gt_classes, &gt_inst, &table) {
            gt_instances.push(GtInstance {
                class_id: c,
                view: frame_idx,
                support,
            });
        }
    }

    let (per_class_iou, miou) = sem_acc.finish();
    let (_, miou_p) = pan_acc.finish();
    let pq_result = pq_acc.finish();
    let (ap50_per_class, ap50) = average_precision_50(&detections, &gt_instances);
    EvalReport {
        per_class_iou,
        miou,
        miou_p,
        pq_result,
        ap50_per_class,
        ap50,
        matched_fraction: if gt_labeled_pixels > 0 {
            covered_pixels as f64 / gt_labeled_pixels as f64
        } else {
            0.0
        },
    }
}

fn group_instances(
    classes: &[ClassId],
    instances: &[u64],
    table: &crate::classes::ClassTable,
) -> BTreeMap<(ClassId, u64), Vec<u32>> {
    let mut out: BTreeMap<(ClassId, u64), Vec<u32>> = BTreeMap::new();
    for (i, (&c, &z)) in classes.iter().zip(instances).enumerate() {
        if z > 0 && table.is_thing(c) {
            out.entry((c, z)).or_default().push(i as u32);
        }
    }
    out
}

/// Match the cloud against the map and score the point labels.
pub fn evaluate_3d(
    map: &mut PanopticMap,
    cloud: &GroundTruthCloud,
    params: &MapParams,
) -> EvalReport {
    let table = map.class_table().clone();
    let labels = match_points_3d(map, cloud, params);
    let confidences = instance_confidences(map);

    let mut sem_acc = ConfusionAccumulator::new();
    let mut pan_acc = ConfusionAccumulator::new();
    let mut matched = 0usize;

    let mut pred_classes = Vec::with_capacity(labels.len());
    let mut pred_instances = Vec::with_capacity(labels.len());
    let mut gt_classes = Vec::with_capacity(labels.len());
    let mut gt_instances_v = Vec::with_capacity(labels.len());
    for (point, label) in cloud.points.iter().zip(&labels) {
        let (sem, pan) = match label {
            Some(l) => {
                matched += 1;
                (l.semantic_class, l.panoptic)
            }
            None => (VOID_CLASS, PanopticLabel3D::void()),
        };
        sem_acc.add(sem, point.class_id);
        pan_acc.add(pan.class_id, point.class_id);
        pred_classes.push(pan.class_id);
        pred_instances.push(pan.instance_id);
        gt_classes.push(point.class_id);
        gt_instances_v.push(point.instance_id);
    }

    let pred_segments = extract_segments(&pred_classes, &pred_instances, &table, None);
    let gt_segments = extract_segments(&gt_classes, &gt_instances_v, &table, None);
    let pq_result = panoptic_quality(&pred_segments, &gt_segments);

    let detections: Vec<Detection> = group_instances(&pred_classes, &pred_instances, &table)
        .into_iter()
        .map(|((c, z), support)| Detection {
            class_id: c,
            confidence: confidences.get(&z).copied().unwrap_or(0.0),
            view: 0,
            support,
        })
        .collect();
    let gt_inst: Vec<GtInstance> = group_instances(&gt_classes, &gt_instances_v, &table)
        .into_iter()
        .map(|((c, _), support)| GtInstance {
            class_id: c,
            view: 0,
            support,
        })
        .collect();
    let (ap50_per_class, ap50) = average_precision_50(&detections, &gt_inst);

    let (per_class_iou, miou) = sem_acc.finish();
    let (_, miou_p) = pan_acc.finish();
    EvalReport {
        per_class_iou,
        miou,
        miou_p,
        pq_result,
        ap50_per_class,
        ap50,
        matched_fraction: if cloud.points.is_empty() {
            0.0
        } else {
            matched as f64 / cloud.points.len() as f64
        },
    }
}
