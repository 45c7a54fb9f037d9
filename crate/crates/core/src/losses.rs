//! Training objectives and their analytic gradients.
//!
//! Every loss is mean-reduced (over regions, region-class pairs, contrastive
//! anchors or foreground boxes) so the trade-off weights do not depend on the
//! batch size.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, ZsdError};
use crate::numerics::{dot, Matrix};
use crate::semantics::SimilarityMatrix;

/// Clamping window for probabilities inside the binary cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// Tolerance on `‖z‖ = 1` accepted by the contrastive loss.
const UNIT_NORM_TOL: f64 = 1e-6;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy of the background+seen logits against region labels.
pub fn seen_classification_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(shape_err("seen_classification_loss labels", logits.rows(), labels.len()));
    }
    let n = logits.rows();
    let mut grad = Matrix::zeros(n, logits.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        if c >= logits.cols() {
            return Err(ZsdError::LabelOutOfRange {
                label: c,
                max: logits.cols() - 1,
            });
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        total += lse - row[c];
        let g = grad.row_mut(i);
        for (k, &l) in row.iter().enumerate() {
            g[k] = (l - lse).exp() / n as f64;
        }
        g[c] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

/// Mean binary cross-entropy of unseen-path probabilities against the
/// similarity row of each region's label. Background regions use the zero row.
pub fn unseen_alignment_loss(
    probs: &Matrix,
    labels: &[usize],
    similarity: &SimilarityMatrix,
) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() {
        return Err(shape_err("unseen_alignment_loss labels", probs.rows(), labels.len()));
    }
    if probs.cols() != similarity.n_unseen() {
        return Err(shape_err("unseen_alignment_loss columns", similarity.n_unseen(), probs.cols()));
    }
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    let count = probs.rows() * probs.cols();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        if c >= similarity.n_classes() {
            return Err(ZsdError::LabelOutOfRange {
                label: c,
                max: similarity.n_classes() - 1,
            });
        }
        let target = similarity.row(c);
        for (j, (&p, &s)) in probs.row(i).iter().zip(target).enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(ZsdError::InvalidProbability(p));
            }
            let o = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total -= s * o.ln() + (1.0 - s) * (1.0 - o).ln();
            if o == p {
                grad.set(i, j, scale * ((1.0 - s) / (1.0 - o) - s / o));
            }
        }
    }
    Ok((total * scale, grad))
}

/// Supervised contrastive loss over region embeddings.
///
/// For every anchor `i` with at least one positive, the per-pair loss
/// `-log(exp(z_i·z_p/τ) / Σ_{k≠i} exp(z_i·z_k/τ))` is averaged over its
/// positives; anchors are then averaged. When `include_background` is false,
/// label-0 regions take no part at all.
pub fn region_contrastive_loss(
    z: &Matrix,
    labels: &[usize],
    temperature: f64,
    include_background: bool,
) -> Result<(f64, Matrix)> {
    if !(temperature > 0.0) {
        return Err(ZsdError::InvalidTemperature(temperature));
    }
    if z.rows() != labels.len() {
        return Err(shape_err("region_contrastive_loss labels", z.rows(), labels.len()));
    }
    for (i, row) in z.row_iter().enumerate() {
        if (dot(row, row).sqrt() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(ZsdError::Unnormalized(i));
        }
    }
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let members: Vec<usize> = (0..z.rows())
        .filter(|&i| include_background || labels[i] != 0)
        .collect();

    // d loss / d s_ik accumulated per anchor, applied after normalizing by anchor count
    let mut coeffs: Vec<(usize, usize, f64)> = Vec::new();
    let mut total = 0.0;
    let mut anchors = 0usize;
    for &i in &members {
        let others: Vec<usize> = members.iter().copied().filter(|&k| k != i).collect();
        let positives = others.iter().filter(|&&k| labels[k] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let zi = z.row(i);
        let logits: Vec<f64> = others.iter().map(|&k| dot(zi, z.row(k)) / temperature).collect();
        let lse = log_sum_exp(logits.iter().copied());
        let inv_p = 1.0 / positives as f64;
        let mut anchor_loss = lse;
        for (&k, &l) in others.iter().zip(&logits) {
            let is_pos = labels[k] == labels[i];
            if is_pos {
                anchor_loss -= l * inv_p;
            }
            let c = ((l - lse).exp() - if is_pos { inv_p } else { 0.0 }) / temperature;
            coeffs.push((i, k, c));
        }
        total += anchor_loss;
    }
    if anchors == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / anchors as f64;
    for (i, k, c) in coeffs {
        let c = c * scale;
        for d in 0..z.cols() {
            let (zi, zk) = (z.get(i, d), z.get(k, d));
            grad.data_mut()[i * z.cols() + d] += c * zk;
            grad.data_mut()[k * z.cols() + d] += c * zi;
        }
    }
    Ok((total * scale, grad))
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Smooth-ℓ1 over the four offsets of foreground regions, divided by the
/// number of foreground regions. Background rows get zero gradient.
pub fn box_regression_loss(
    pred: &Matrix,
    targets: &Matrix,
    labels: &[usize],
) -> Result<(f64, Matrix)> {
    if pred.shape() != targets.shape() || pred.cols() != 4 {
        return Err(shape_err(
            "box_regression_loss",
            format!("{}x4 / {:?}", pred.rows(), pred.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    if labels.len() != pred.rows() {
        return Err(shape_err("box_regression_loss labels", pred.rows(), labels.len()));
    }
    let mut grad = Matrix::zeros(pred.rows(), 4);
    let fg = labels.iter().filter(|&&c| c != 0).count();
    if fg == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / fg as f64;
    let mut total = 0.0;
    for (i, _) in labels.iter().enumerate().filter(|(_, &c)| c != 0) {
        for k in 0..4 {
            let d = pred.get(i, k) - targets.get(i, k);
            total += smooth_l1(d);
            grad.set(i, k, smooth_l1_grad(d) * scale);
        }
    }
    Ok((total * scale, grad))
}

/// The four loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reg: f64,
    pub cls_seen: f64,
    pub cls_unseen: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// `reg + cls_seen + lambda * cls_unseen + beta * contrastive`.
pub fn total_loss(
    reg: f64,
    cls_seen: f64,
    cls_unseen: f64,
    contrastive: f64,
    lambda: f64,
    beta: f64,
) -> LossBreakdown {
    LossBreakdown {
        reg,
        cls_seen,
        cls_unseen,
        contrastive,
        total: reg + cls_seen + lambda * cls_unseen + beta * contrastive,
    }
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.reg, self.cls_seen, self.cls_unseen, self.contrastive, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}
