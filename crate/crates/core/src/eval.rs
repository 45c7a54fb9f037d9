//! Detection metrics: greedy matching, Recall@k, 11-point interpolated AP,
//! subset mAP and the seen/unseen harmonic mean.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZsdError};
use crate::geometry::iou;
use crate::inference::{Detection, Mode};
use crate::semantics::{ClassVocabulary, Role};
use crate::synthdata::{GroundTruth, SynthDataset};

/// Ground truth keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    pub images: BTreeMap<String, Vec<GroundTruth>>,
}

impl GroundTruthSet {
    pub fn from_dataset(ds: &SynthDataset) -> Self {
        Self {
            images: ds.images.iter().map(|i| (i.image_id.clone(), i.gts.clone())).collect(),
        }
    }

    pub fn count(&self, class: usize) -> usize {
        self.images.values().flatten().filter(|g| g.label == class).count()
    }
}

/// Score descending, then class and box, so that results do not depend on
/// input order.
fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class.cmp(&b.class))
        .then_with(|| {
            let ka = [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h];
            let kb = [b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h];
            ka.iter().zip(&kb).fold(Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y)))
        })
}

/// Greedy single-match assignment for one image. `dets` must be
/// score-sorted; each detection takes the highest-IoU unmatched
/// ground truth of its class with IoU at least `iou_threshold`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (k, g) in gts.iter().enumerate() {
                if taken[k] || g.label != d.class {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            match best {
                Some((k, _)) => {
                    taken[k] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

fn group_by_image(dets: &[Detection]) -> BTreeMap<&str, Vec<Detection>> {
    let mut by: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by.entry(d.image_id.as_str()).or_default().push(d.clone());
    }
    for v in by.values_mut() {
        v.sort_by(detection_order);
    }
    by
}

/// Fraction of ground truth matched by each image's top `k` detections.
pub fn recall_at_k(dets: &[Detection], gts: &GroundTruthSet, k: usize, iou_threshold: f64) -> f64 {
    let total: usize = gts.images.values().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let by = group_by_image(dets);
    let mut hit = 0usize;
    for (id, g) in &gts.images {
        if let Some(d) = by.get(id.as_str()) {
            let top = &d[..d.len().min(k)];
            hit += match_detections(top, g, iou_threshold).iter().filter(|&&t| t).count();
        }
    }
    hit as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// Set when the class has no ground truth, in which case `ap` is 0.
    pub no_ground_truth: bool,
}

/// 11-point interpolated AP from TP flags listed in descending score order.
/// At each recall level `r` the interpolated precision is the best precision
/// among cut-offs whose recall reaches `r`, or 0 if none does.
pub fn average_precision_11pt(flags: &[bool], n_gt: usize) -> ApResult {
    if n_gt == 0 {
        return ApResult {
            ap: 0.0,
            no_ground_truth: true,
        };
    }
    let mut tp = 0usize;
    let mut points: Vec<(usize, f64)> = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        points.push((tp, tp as f64 / (i + 1) as f64));
    }
    let mut sum = 0.0;
    for level in 0..=10usize {
        // recall >= level/10  <=>  10 * tp >= level * n_gt, exact in integers
        let p = points
            .iter()
            .filter(|(t, _)| 10 * t >= level * n_gt)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        sum += p;
    }
    ApResult {
        ap: sum / 11.0,
        no_ground_truth: false,
    }
}

pub fn harmonic_mean(seen: f64, unseen: f64) -> f64 {
    if seen + unseen > 0.0 {
        2.0 * seen * unseen / (seen + unseen)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: String,
    pub role: Role,
    pub iou_threshold: f64,
    pub ap: f64,
    pub n_gt: usize,
    pub n_detections: usize,
    pub no_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub iou_threshold: f64,
    pub recall_at_100: f64,
    /// Mean AP over evaluated classes that have ground truth.
    pub map: f64,
    pub map_seen: Option<f64>,
    pub map_unseen: Option<f64>,
    pub recall_seen: Option<f64>,
    pub recall_unseen: Option<f64>,
    /// Harmonic mean of seen and unseen mAP (generalized mode only).
    pub harmonic_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub metrics: Vec<ThresholdMetrics>,
    pub per_class: Vec<ClassAp>,
    pub n_ground_truth: usize,
    pub n_detections: usize,
}

impl EvalReport {
    pub fn at(&self, iou_threshold: f64) -> Option<&ThresholdMetrics> {
        self.metrics.iter().find(|m| m.iou_threshold == iou_threshold)
    }

    /// Metrics at the first requested threshold.
    pub fn primary(&self) -> &ThresholdMetrics {
        &self.metrics[0]
    }
}

pub const RECALL_TOP_K: usize = 100;

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn filter_gts(gts: &GroundTruthSet, keep: impl Fn(usize) -> bool) -> GroundTruthSet {
    GroundTruthSet {
        images: gts
            .images
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().filter(|g| keep(g.label)).cloned().collect()))
            .collect(),
    }
}

/// Per-class AP, subset means and recall for each IoU threshold. Only the
/// classes admitted by `mode` are evaluated; classes without ground truth
/// are reported with a flag and left out of every mean.
pub fn build_report(
    dets: &[Detection],
    gts: &GroundTruthSet,
    vocab: &ClassVocabulary,
    iou_thresholds: &[f64],
    mode: Mode,
) -> Result<EvalReport> {
    if iou_thresholds.is_empty() || iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(ZsdError::InvalidConfig("IoU thresholds must be a non-empty list in [0, 1]".into()));
    }
    if let Some(d) = dets.iter().find(|d| d.class == 0 || d.class >= vocab.n_classes()) {
        return Err(ZsdError::UnknownClass(format!("class index {}", d.class)));
    }
    if let Some(d) = dets.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
        return Err(ZsdError::InvalidProbability(d.score));
    }
    let classes: Vec<usize> = (1..vocab.n_classes()).filter(|&c| mode.admits(vocab, c)).collect();
    let dets: Vec<Detection> = dets.iter().filter(|d| mode.admits(vocab, d.class)).cloned().collect();
    let gts = filter_gts(gts, |c| mode.admits(vocab, c));
    let empty = Vec::new();
    let by_image = group_by_image(&dets);

    let mut metrics = Vec::new();
    let mut per_class = Vec::new();
    for &thr in iou_thresholds {
        // per-class (score, tie key, flag) lists
        let mut flagged: BTreeMap<usize, Vec<(&Detection, bool)>> = BTreeMap::new();
        for (id, ds) in &by_image {
            let g = gts.images.get(*id).unwrap_or(&empty);
            for (d, f) in ds.iter().zip(match_detections(ds, g, thr)) {
                flagged.entry(d.class).or_default().push((d, f));
            }
        }
        let mut aps: Vec<(usize, f64)> = Vec::new();
        for &c in &classes {
            let mut list = flagged.remove(&c).unwrap_or_default();
            list.sort_by(|a, b| detection_order(a.0, b.0).then_with(|| a.0.image_id.cmp(&b.0.image_id)));
            let flags: Vec<bool> = list.iter().map(|x| x.1).collect();
            let n_gt = gts.count(c);
            let r = average_precision_11pt(&flags, n_gt);
            if !r.no_ground_truth {
                aps.push((c, r.ap));
            }
            per_class.push(ClassAp {
                class: vocab.name(c).to_string(),
                role: vocab.role(c),
                iou_threshold: thr,
                ap: r.ap,
                n_gt,
                n_detections: flags.len(),
                no_ground_truth: r.no_ground_truth,
            });
        }
        let role_map = |role: Role| -> f64 {
            let v: Vec<f64> = aps.iter().filter(|(c, _)| vocab.role(*c) == role).map(|x| x.1).collect();
            mean(&v)
        };
        let role_recall = |role: Role| -> f64 {
            let g = filter_gts(&gts, |c| vocab.role(c) == role);
            let d: Vec<Detection> = dets.iter().filter(|d| vocab.role(d.class) == role).cloned().collect();
            recall_at_k(&d, &g, RECALL_TOP_K, thr)
        };
        let all: Vec<f64> = aps.iter().map(|x| x.1).collect();
        let (map_seen, map_unseen, recall_seen, recall_unseen, hm) = match mode {
            Mode::Seen => (Some(role_map(Role::Seen)), None, None, None, None),
            Mode::Zsd => (None, Some(role_map(Role::Unseen)), None, None, None),
            Mode::Gzsd => {
                let (s, u) = (role_map(Role::Seen), role_map(Role::Unseen));
                (
                    Some(s),
                    Some(u),
                    Some(role_recall(Role::Seen)),
                    Some(role_recall(Role::Unseen)),
                    Some(harmonic_mean(s, u)),
                )
            }
        };
        metrics.push(ThresholdMetrics {
            iou_threshold: thr,
            recall_at_100: recall_at_k(&dets, &gts, RECALL_TOP_K, thr),
            map: mean(&all),
            map_seen,
            map_unseen,
            recall_seen,
            recall_unseen,
            harmonic_mean: hm,
        });
    }
    Ok(EvalReport {
        mode,
        metrics,
        per_class,
        n_ground_truth: gts.images.values().map(Vec::len).sum(),
        n_detections: dets.len(),
    })
}
