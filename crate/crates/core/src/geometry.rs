//! Center-size boxes, IoU, regression offsets and greedy NMS.

use serde::{Deserialize, Serialize};

/// Offsets larger than this in log space are clamped before `exp` when decoding.
pub const MAX_LOG_SCALE: f64 = 4.0;

/// Axis-aligned box stored as center `(x, y)` and extent `(w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.x - self.w / 2.0,
            self.y - self.h / 2.0,
            self.x + self.w / 2.0,
            self.y + self.h / 2.0,
        )
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }
}

pub fn intersection(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let w = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let h = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    w * h
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Regression target `(t_x, t_y, t_w, t_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct OffsetTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl From<[f64; 4]> for OffsetTarget {
    fn from(v: [f64; 4]) -> Self {
        OffsetTarget {
            tx: v[0],
            ty: v[1],
            tw: v[2],
            th: v[3],
        }
    }
}

impl From<OffsetTarget> for [f64; 4] {
    fn from(t: OffsetTarget) -> Self {
        [t.tx, t.ty, t.tw, t.th]
    }
}

impl OffsetTarget {
    pub fn to_array(self) -> [f64; 4] {
        self.into()
    }
}

/// Signed, size-normalized center shift and log size ratio of `gt` relative to `proposal`.
pub fn encode_offsets(proposal: &BBox, gt: &BBox) -> OffsetTarget {
    OffsetTarget {
        tx: (gt.x - proposal.x) / proposal.w,
        ty: (gt.y - proposal.y) / proposal.h,
        tw: (gt.w / proposal.w).ln(),
        th: (gt.h / proposal.h).ln(),
    }
}

/// Inverse of [`encode_offsets`]; `t_w` and `t_h` are clamped to `±MAX_LOG_SCALE`.
pub fn decode_offsets(proposal: &BBox, t: &OffsetTarget) -> BBox {
    let tw = t.tw.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    let th = t.th.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    BBox::new(
        proposal.x + t.tx * proposal.w,
        proposal.y + t.ty * proposal.h,
        proposal.w * tw.exp(),
        proposal.h * th.exp(),
    )
}

/// Greedy NMS. Returns indices into `detections` of the kept boxes, highest
/// score first; equal scores keep the lower index first. A box is
/// suppressed when its IoU with a kept box is strictly above `iou_threshold`.
pub fn nms(detections: &[(BBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].1.total_cmp(&detections[a].1).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let b = &detections[i].0;
        if kept.iter().all(|&k| iou(&detections[k].0, b) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}
