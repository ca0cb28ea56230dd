//! Attack objectives over head scores and decoded boxes.
//!
//! Every objective is minimized. The free functions return values only;
//! [`Objective::value_and_grad`] also returns exact gradients with respect
//! to each score and each box's `[x, y, z, l, w, h, yaw]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::anchors::ProposalBox;
use crate::head::BOX_PARAMS;
use crate::math::{ln, sigmoid, sin_cos};

use super::AttackConfig;

/// Mean hinge `max(0, tau - s)` over every anchor score.
pub fn loss_conf(scores: &[f64], tau: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|&s| (tau - s).max(0.0)).sum::<f64>() / scores.len() as f64
}

/// Smoothed fraction of boxes longer than `l_max` or wider than `w_max`.
pub fn loss_shape(boxes: &[ProposalBox], l_max: f64, w_max: f64, beta: f64) -> f64 {
    mean(boxes, |b| shape_term(b, l_max, w_max, beta).0)
}

/// Exact fraction of boxes exceeding either size bound.
pub fn shape_indicator(boxes: &[ProposalBox], l_max: f64, w_max: f64) -> f64 {
    mean(boxes, |b| if b.length > l_max || b.width > w_max { 1.0 } else { 0.0 })
}

/// Smoothed fraction of boxes centered outside `[z_min, z_max]`.
pub fn loss_vertical(boxes: &[ProposalBox], z_min: f64, z_max: f64, beta: f64) -> f64 {
    mean(boxes, |b| vertical_term(b, z_min, z_max, beta).0)
}

pub fn vertical_indicator(boxes: &[ProposalBox], z_min: f64, z_max: f64) -> f64 {
    mean(boxes, |b| if b.z < z_min || b.z > z_max { 1.0 } else { 0.0 })
}

/// `lambda1 * conf + lambda2 * (shape + vertical)`.
pub fn loss_total(scores: &[f64], boxes: &[ProposalBox], cfg: &AttackConfig) -> f64 {
    cfg.lambda1 * loss_conf(scores, cfg.tau)
        + cfg.lambda2
            * (loss_shape(boxes, cfg.l_max, cfg.w_max, cfg.surrogate_beta)
                + loss_vertical(boxes, cfg.z_min, cfg.z_max, cfg.surrogate_beta))
}

/// Clamp keeping the log terms finite at saturated scores.
const BCE_EPS: f64 = 1e-7;

/// Label for the PGD baseline: a benign score at or above one half.
pub fn hard_label(benign_score: f64) -> bool {
    benign_score >= 0.5
}

/// Negative binary cross-entropy of `scores` against the benign hard labels.
///
/// Zero when the scores reproduce the labels exactly; large negative when
/// every prediction is flipped. Minimizing it maximizes classification error.
pub fn baseline_pgd_loss(scores: &[f64], benign_scores: &[f64]) -> f64 {
    assert_eq!(scores.len(), benign_scores.len(), "score arrays must have equal length");
    if scores.is_empty() {
        return 0.0;
    }
    let total: f64 = scores
        .iter()
        .zip(benign_scores)
        .map(|(&s, &b)| {
            let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if hard_label(b) {
                ln(s)
            } else {
                ln(1.0 - s)
            }
        })
        .sum();
    total / scores.len() as f64
}

/// Prior-art latency objective: `-(1/N) sum s` plus the summed pairwise
/// overlap among boxes scoring at least `select_threshold`, divided by the
/// number of such boxes.
///
/// Overlap is measured on each box's axis-aligned BEV footprint so it is
/// differentiable in position, size and yaw.
pub fn baseline_prior_art_loss(scores: &[f64], boxes: &[ProposalBox], select_threshold: f64) -> f64 {
    PriorArtLoss { select_threshold }.value(scores, boxes)
}

/// Gradients of an objective with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub scores: Vec<f64>,
    pub boxes: Vec<[f64; BOX_PARAMS]>,
}

impl LossGrad {
    pub fn zeros(n_scores: usize, n_boxes: usize) -> Self {
        Self { scores: vec![0.0; n_scores], boxes: vec![[0.0; BOX_PARAMS]; n_boxes] }
    }
}

/// An attack objective; `scores[k]` belongs to `boxes[k]`.
pub trait Objective {
    fn value_and_grad(&self, scores: &[f64], boxes: &[ProposalBox]) -> (f64, LossGrad);

    fn value(&self, scores: &[f64], boxes: &[ProposalBox]) -> f64 {
        self.value_and_grad(scores, boxes).0
    }
}

/// Capped confidence activation with shape and elevation plausibility terms.
#[derive(Debug, Clone, Copy)]
pub struct CpFreezerLoss {
    pub cfg: AttackConfig,
}

impl Objective for CpFreezerLoss {
    fn value_and_grad(&self, scores: &[f64], boxes: &[ProposalBox]) -> (f64, LossGrad) {
        let cfg = &self.cfg;
        let mut grad = LossGrad::zeros(scores.len(), boxes.len());
        let value = loss_total(scores, boxes, cfg);
        if !scores.is_empty() {
            let g = -cfg.lambda1 / scores.len() as f64;
            for (gs, &s) in grad.scores.iter_mut().zip(scores) {
                if s < cfg.tau {
                    *gs = g;
                }
            }
        }
        if !boxes.is_empty() {
            let w = cfg.lambda2 / boxes.len() as f64;
            for (gb, b) in grad.boxes.iter_mut().zip(boxes) {
                let (_, dl, dw) = shape_term(b, cfg.l_max, cfg.w_max, cfg.surrogate_beta);
                let (_, dz) = vertical_term(b, cfg.z_min, cfg.z_max, cfg.surrogate_beta);
                gb[2] += w * dz;
                gb[3] += w * dl;
                gb[4] += w * dw;
            }
        }
        (value, grad)
    }
}

/// Untargeted degradation: negative BCE against benign hard labels.
#[derive(Debug, Clone)]
pub struct PgdLoss {
    pub benign_scores: Vec<f64>,
}

impl Objective for PgdLoss {
    fn value_and_grad(&self, scores: &[f64], boxes: &[ProposalBox]) -> (f64, LossGrad) {
        let mut grad = LossGrad::zeros(scores.len(), boxes.len());
        let value = baseline_pgd_loss(scores, &self.benign_scores);
        let n = scores.len().max(1) as f64;
        for ((g, &s), &b) in grad.scores.iter_mut().zip(scores).zip(&self.benign_scores) {
            if s <= BCE_EPS || s >= 1.0 - BCE_EPS {
                continue;
            }
            *g = if hard_label(b) { 1.0 / (s * n) } else { -1.0 / ((1.0 - s) * n) };
        }
        (value, grad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PriorArtLoss {
    pub select_threshold: f64,
}

impl Objective for PriorArtLoss {
    fn value_and_grad(&self, scores: &[f64], boxes: &[ProposalBox]) -> (f64, LossGrad) {
        let mut grad = LossGrad::zeros(scores.len(), boxes.len());
        let mut value = 0.0;
        if !scores.is_empty() {
            let n = scores.len() as f64;
            value -= scores.iter().sum::<f64>() / n;
            grad.scores.iter_mut().for_each(|g| *g = -1.0 / n);
        }
        let candidates: Vec<usize> = (0..boxes.len()).filter(|&i| scores[i] >= self.select_threshold).collect();
        if candidates.len() < 2 {
            return (value, grad);
        }
        let norm = 1.0 / candidates.len() as f64;
        let fp: Vec<Footprint> = candidates.iter().map(|&i| Footprint::new(&boxes[i])).collect();
        // sweep over x-intervals
        let mut order: Vec<usize> = (0..fp.len()).collect();
        order.sort_unstable_by(|&a, &b| fp[a].left().total_cmp(&fp[b].left()));
        for (oi, &a) in order.iter().enumerate() {
            let right = fp[a].right();
            for &b in &order[oi + 1..] {
                if fp[b].left() >= right {
                    break;
                }
                if let Some((iou, ga, gb)) = aabb_iou_grad(&fp[a], &fp[b]) {
                    value += norm * iou;
                    let (ia, ib) = (candidates[a], candidates[b]);
                    for p in 0..BOX_PARAMS {
                        grad.boxes[ia][p] += norm * ga[p];
                        grad.boxes[ib][p] += norm * gb[p];
                    }
                }
            }
        }
        (value, grad)
    }
}

fn mean(boxes: &[ProposalBox], f: impl Fn(&ProposalBox) -> f64) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    boxes.iter().map(f).sum::<f64>() / boxes.len() as f64
}

/// Returns `(term, d/dl, d/dw)` for `max(sig(beta(l - L)), sig(beta(w - W)))`.
fn shape_term(b: &ProposalBox, l_max: f64, w_max: f64, beta: f64) -> (f64, f64, f64) {
    let tl = sigmoid(beta * (b.length - l_max));
    let tw = sigmoid(beta * (b.width - w_max));
    if tl >= tw {
        (tl, beta * tl * (1.0 - tl), 0.0)
    } else {
        (tw, 0.0, beta * tw * (1.0 - tw))
    }
}

/// Returns `(term, d/dz)` for `max(sig(beta(zmin - z)), sig(beta(z - zmax)))`.
fn vertical_term(b: &ProposalBox, z_min: f64, z_max: f64, beta: f64) -> (f64, f64) {
    let lo = sigmoid(beta * (z_min - b.z));
    let hi = sigmoid(beta * (b.z - z_max));
    if lo >= hi {
        (lo, -beta * lo * (1.0 - lo))
    } else {
        (hi, beta * hi * (1.0 - hi))
    }
}

/// Axis-aligned BEV footprint of a yaw-rotated box.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    x: f64,
    y: f64,
    hx: f64,
    hy: f64,
    // d(hx)/d(l, w, yaw), d(hy)/d(l, w, yaw)
    dhx: [f64; 3],
    dhy: [f64; 3],
}

impl Footprint {
    fn new(b: &ProposalBox) -> Self {
        let (s, c) = sin_cos(b.yaw);
        let (ac, asn) = (c.abs(), s.abs());
        let dac = -c.signum() * s;
        let das = s.signum() * c;
        Self {
            x: b.x,
            y: b.y,
            hx: 0.5 * (b.length * ac + b.width * asn),
            hy: 0.5 * (b.length * asn + b.width * ac),
            dhx: [0.5 * ac, 0.5 * asn, 0.5 * (b.length * dac + b.width * das)],
            dhy: [0.5 * asn, 0.5 * ac, 0.5 * (b.length * das + b.width * dac)],
        }
    }

    fn left(&self) -> f64 {
        self.x - self.hx
    }

    fn right(&self) -> f64 {
        self.x + self.hx
    }
}

/// One-dimensional overlap `min(ra, rb) - max(la, lb)` and its partials with
/// respect to (center_a, half_a, center_b, half_b).
fn overlap_1d(ca: f64, ha: f64, cb: f64, hb: f64) -> (f64, [f64; 4]) {
    let (ra, rb) = (ca + ha, cb + hb);
    let (la, lb) = (ca - ha, cb - hb);
    let mut d = [0.0; 4];
    let right = if ra <= rb {
        d[0] += 1.0;
        d[1] += 1.0;
        ra
    } else {
        d[2] += 1.0;
        d[3] += 1.0;
        rb
    };
    let left = if la >= lb {
        d[0] -= 1.0;
        d[1] += 1.0;
        la
    } else {
        d[2] -= 1.0;
        d[3] += 1.0;
        lb
    };
    (right - left, d)
}

type BoxGrad = [f64; BOX_PARAMS];

fn aabb_iou_grad(a: &Footprint, b: &Footprint) -> Option<(f64, BoxGrad, BoxGrad)> {
    let (ox, dox) = overlap_1d(a.x, a.hx, b.x, b.hx);
    let (oy, doy) = overlap_1d(a.y, a.hy, b.y, b.hy);
    if ox <= 0.0 || oy <= 0.0 {
        return None;
    }
    let inter = ox * oy;
    let area_a = 4.0 * a.hx * a.hy;
    let area_b = 4.0 * b.hx * b.hy;
    let union = area_a + area_b - inter;
    let iou = inter / union;
    let d_inter = (area_a + area_b) / (union * union);
    let d_area = -inter / (union * union);

    // partials w.r.t. (x, hx) and (y, hy) of each box
    let ga_x = d_inter * oy * dox[0];
    let ga_hx = d_inter * oy * dox[1] + d_area * 4.0 * a.hy;
    let gb_x = d_inter * oy * dox[2];
    let gb_hx = d_inter * oy * dox[3] + d_area * 4.0 * b.hy;
    let ga_y = d_inter * ox * doy[0];
    let ga_hy = d_inter * ox * doy[1] + d_area * 4.0 * a.hx;
    let gb_y = d_inter * ox * doy[2];
    let gb_hy = d_inter * ox * doy[3] + d_area * 4.0 * b.hx;

    let expand = |f: &Footprint, gx: f64, ghx: f64, gy: f64, ghy: f64| -> BoxGrad {
        [
            gx,
            gy,
            0.0,
            ghx * f.dhx[0] + ghy * f.dhy[0],
            ghx * f.dhx[1] + ghy * f.dhy[1],
            0.0,
            ghx * f.dhx[2] + ghy * f.dhy[2],
        ]
    };
    Some((iou, expand(a, ga_x, ga_hx, ga_y, ga_hy), expand(b, gb_x, gb_hx, gb_y, gb_hy)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, l: f64, w: f64, z: f64) -> ProposalBox {
        let mut b = ProposalBox::bev(x, y, l, w, 0.0, 0.5);
        b.z = z;
        b
    }

    #[test]
    fn conf_saturated_is_zero() {
        assert_eq!(loss_conf(&[0.2, 0.5, 0.9], 0.2), 0.0);
    }

    #[test]
    fn conf_all_zero_scores() {
        assert!((loss_conf(&[0.0; 16], 0.2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn conf_hand_case() {
        assert!((loss_conf(&[0.1, 0.3], 0.2) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn conf_gradient_vanishes_above_tau() {
        let cfg = AttackConfig::default();
        let (_, g) = CpFreezerLoss { cfg }.value_and_grad(&[0.1, 0.25], &[]);
        assert!(g.scores[0] < 0.0);
        assert_eq!(g.scores[1], 0.0);
    }

    #[test]
    fn shape_far_below_bounds() {
        let boxes = [bx(0.0, 0.0, 3.9, 1.6, 2.0), bx(5.0, 0.0, 4.2, 1.8, 2.0)];
        assert!(loss_shape(&boxes, 5.0, 5.0, 10.0) <= 1e-3);
        assert_eq!(shape_indicator(&boxes, 5.0, 5.0), 0.0);
    }

    #[test]
    fn shape_at_the_bound_is_half() {
        let boxes = [bx(0.0, 0.0, 5.0, 1.6, 2.0)];
        assert!((loss_shape(&boxes, 5.0, 5.0, 10.0) - 0.5).abs() < 1e-12);
        assert_eq!(loss_shape(&[], 5.0, 5.0, 10.0), 0.0);
    }

    #[test]
    fn vertical_cases() {
        let inside = [bx(0.0, 0.0, 4.0, 2.0, 2.0); 3];
        assert!(loss_vertical(&inside, 1.0, 3.0, 100.0) < 1e-3);
        let top = [bx(0.0, 0.0, 4.0, 2.0, 3.0)];
        assert!((loss_vertical(&top, 1.0, 3.0, 10.0) - 0.5).abs() < 1e-12);
        assert_eq!(vertical_indicator(&[bx(0.0, 0.0, 4.0, 2.0, 0.5)], 1.0, 3.0), 1.0);
        assert_eq!(loss_vertical(&[], 1.0, 3.0, 10.0), 0.0);
    }

    #[test]
    fn total_weighting() {
        let cfg = AttackConfig::default();
        let zeros = loss_total(&[0.9; 4], &[bx(0.0, 0.0, 1.0, 1.0, 2.0)], &AttackConfig { surrogate_beta: 1e3, ..cfg });
        assert!(zeros < 1e-12);
        // component losses (0.05, 0.2, 0.1) under the default weights
        let total = cfg.lambda1 * 0.05 + cfg.lambda2 * (0.2 + 0.1);
        assert!((total - 0.305).abs() < 1e-15);
    }

    #[test]
    fn pgd_matching_and_flipped_labels() {
        let benign = [0.9, 0.1, 0.8, 0.0];
        let matching = [1.0, 0.0, 1.0, 0.0];
        assert!(baseline_pgd_loss(&matching, &benign).abs() < 1e-6);
        let flipped = [0.0, 1.0, 0.0, 1.0];
        let l = baseline_pgd_loss(&flipped, &benign);
        assert!((l - ln(BCE_EPS)).abs() < 1e-9);
        // direct formula on a mixed case
        let s = [0.7, 0.2];
        let b = [0.6, 0.3];
        let direct = ((0.7f64).ln() + (0.8f64).ln()) / 2.0;
        assert!((baseline_pgd_loss(&s, &b) - direct).abs() < 1e-15);
    }

    #[test]
    fn prior_art_cases() {
        let one = [bx(0.0, 0.0, 4.0, 2.0, 2.0)];
        assert!((baseline_prior_art_loss(&[1.0], &one, 0.2) + 1.0).abs() < 1e-15);
        let disjoint = [bx(0.0, 0.0, 4.0, 2.0, 2.0), bx(10.0, 0.0, 4.0, 2.0, 2.0)];
        assert!((baseline_prior_art_loss(&[1.0, 1.0], &disjoint, 0.2) + 1.0).abs() < 1e-15);
        let overlapping = [bx(0.0, 0.0, 4.0, 2.0, 2.0), bx(2.0, 0.0, 4.0, 2.0, 2.0)];
        // IoU 4/12 shared by two candidates
        let v = baseline_prior_art_loss(&[1.0, 1.0], &overlapping, 0.2);
        assert!((v - (-1.0 + (1.0 / 3.0) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn conf_is_monotone_in_each_score() {
        let base = [0.05, 0.15, 0.25, 0.6];
        for k in 0..base.len() {
            let mut raised = base;
            raised[k] += 0.07;
            assert!(loss_conf(&raised, 0.2) <= loss_conf(&base, 0.2));
        }
    }
}
