//! Anchor priors and the offset / log-size box decoder.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{structural, validation, Result};
use crate::feature::cell_center;
use crate::head::{RawPrediction, BOX_PARAMS};
use crate::math::{exp, sin_cos, wrap_angle};
use crate::pose::PoseSE2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub priors: Vec<AnchorPrior>,
    /// Prior box center height in meters.
    pub z_center: f64,
    /// Meters per grid cell.
    pub resolution: f64,
}

impl AnchorConfig {
    /// Two car-sized anchors per cell, at 0 and 90 degrees.
    pub fn car_default(resolution: f64) -> Self {
        let prior = |yaw| AnchorPrior { length: 3.9, width: 1.6, height: 1.56, yaw };
        Self {
            priors: alloc::vec![prior(0.0), prior(core::f64::consts::FRAC_PI_2)],
            z_center: 2.0,
            resolution,
        }
    }

    pub fn count(&self) -> usize {
        self.priors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.priors.is_empty() {
            return Err(validation("anchor config needs at least one prior"));
        }
        if self.priors.iter().any(|p| !(p.length > 0.0 && p.width > 0.0 && p.height > 0.0)) {
            return Err(validation("anchor prior dimensions must be positive"));
        }
        if !(self.resolution > 0.0) {
            return Err(validation("grid resolution must be positive"));
        }
        Ok(())
    }
}

/// Position of a proposal in the head output: `(anchor, row, col)`.
///
/// The derived ordering is lexicographic, which equals the flat index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SourceIndex {
    pub anchor: u32,
    pub row: u32,
    pub col: u32,
}

/// A decoded 3D box with its objectness score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalBox {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub score: f64,
    pub source: SourceIndex,
}

impl ProposalBox {
    /// Axis-aligned helper for tests and fixtures.
    pub fn bev(x: f64, y: f64, length: f64, width: f64, yaw: f64, score: f64) -> Self {
        Self {
            x,
            y,
            z: 0.0,
            length,
            width,
            height: 1.5,
            yaw,
            score,
            source: SourceIndex { anchor: 0, row: 0, col: 0 },
        }
    }

    pub fn with_source(mut self, anchor: u32, row: u32, col: u32) -> Self {
        self.source = SourceIndex { anchor, row, col };
        self
    }

    /// Re-expresses an ego-frame box in world coordinates.
    pub fn to_world(&self, ego: &PoseSE2) -> Self {
        let (x, y) = ego.local_to_world(self.x, self.y);
        Self { x, y, yaw: wrap_angle(self.yaw + ego.yaw), ..*self }
    }

    pub fn params(&self) -> [f64; BOX_PARAMS] {
        [self.x, self.y, self.z, self.length, self.width, self.height, self.yaw]
    }

    /// BEV corners, counter-clockwise.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = sin_cos(self.yaw);
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        local.map(|(u, v)| (self.x + c * u - s * v, self.y + s * u + c * v))
    }
}

/// Decodes every `(anchor, cell)` of a head output into an ego-frame box.
///
/// Output order is the flat source index order, so the result has exactly
/// `B * H * W` entries.
pub fn decode_proposals(raw: &RawPrediction, anchors: &AnchorConfig) -> Result<Vec<ProposalBox>> {
    check_prediction(raw, anchors)?;
    let plane = raw.rows * raw.cols;
    let mut out = Vec::with_capacity(raw.anchors * plane);
    for a in 0..raw.anchors {
        for cell in 0..plane {
            out.push(decode_one(raw, anchors, a, cell));
        }
    }
    Ok(out)
}

/// Decodes only the `(anchor, cell)` pairs scoring at or above `threshold`,
/// in the same relative order as [`decode_proposals`].
///
/// Equivalent to filtering the full decode, without materializing the boxes
/// that the confidence filter would throw away.
pub fn decode_above(raw: &RawPrediction, anchors: &AnchorConfig, threshold: f64) -> Result<Vec<ProposalBox>> {
    check_prediction(raw, anchors)?;
    let plane = raw.rows * raw.cols;
    let mut out = Vec::new();
    for (i, &s) in raw.scores.iter().enumerate() {
        if s >= threshold {
            out.push(decode_one(raw, anchors, i / plane, i % plane));
        }
    }
    Ok(out)
}

fn check_prediction(raw: &RawPrediction, anchors: &AnchorConfig) -> Result<()> {
    anchors.validate()?;
    if raw.anchors != anchors.count() {
        return Err(structural("prediction anchor count does not match the anchor config"));
    }
    let plane = raw.rows * raw.cols;
    if raw.scores.len() != raw.anchors * plane || raw.deltas.len() != raw.anchors * BOX_PARAMS * plane {
        return Err(structural("prediction arrays do not match their declared shape"));
    }
    Ok(())
}

#[inline]
fn decode_one(raw: &RawPrediction, anchors: &AnchorConfig, a: usize, cell: usize) -> ProposalBox {
    let plane = raw.rows * raw.cols;
    let prior = &anchors.priors[a];
    let base = a * BOX_PARAMS * plane + cell;
    let d = |p: usize| raw.deltas[base + p * plane];
    let (row, col) = (cell / raw.cols, cell % raw.cols);
    let (cx, cy) = cell_center(raw.rows, raw.cols, anchors.resolution, row, col);
    ProposalBox {
        x: cx + d(0) * prior.length,
        y: cy + d(1) * prior.width,
        z: anchors.z_center + d(2) * prior.height,
        length: prior.length * exp(d(3)),
        width: prior.width * exp(d(4)),
        height: prior.height * exp(d(5)),
        yaw: prior.yaw + d(6),
        score: raw.scores[a * plane + cell],
        source: SourceIndex { anchor: a as u32, row: row as u32, col: col as u32 },
    }
}

/// Chain rule through [`decode_proposals`]: maps per-box parameter gradients
/// (`[x, y, z, l, w, h, yaw]`, same order as the decoded list) onto the raw
/// delta layout `[anchor * 7 + param][row][col]`.
pub fn decode_backward(
    boxes: &[ProposalBox],
    box_grads: &[[f64; BOX_PARAMS]],
    anchors: &AnchorConfig,
    rows: usize,
    cols: usize,
) -> Vec<f64> {
    let plane = rows * cols;
    let mut grad = alloc::vec![0.0; anchors.count() * BOX_PARAMS * plane];
    for (b, g) in boxes.iter().zip(box_grads) {
        let a = b.source.anchor as usize;
        let prior = &anchors.priors[a];
        let cell = b.source.row as usize * cols + b.source.col as usize;
        let base = a * BOX_PARAMS * plane + cell;
        let local = [
            g[0] * prior.length,
            g[1] * prior.width,
            g[2] * prior.height,
            g[3] * b.length,
            g[4] * b.width,
            g[5] * b.height,
            g[6],
        ];
        for (p, v) in local.iter().enumerate() {
            grad[base + p * plane] += v;
        }
    }
    grad
}
