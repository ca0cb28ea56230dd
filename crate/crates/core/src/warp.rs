//! Rigid frame-to-frame transforms in feature-pixel units and bilinear
//! feature warping.
//!
//! Pixel coordinates are measured from the grid center (`cols / 2`,
//! `rows / 2`), `u` along columns and `v` along rows, so rotations act
//! about the ego origin.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result, Stage};
use crate::feature::FeatureMap;
use crate::math::{floor, sin_cos};
use crate::pose::PoseSE2;
use crate::tensor::Tensor3;

/// Determinants below this are treated as singular.
const SINGULAR_EPS: f64 = 1e-12;

/// A 3x3 homogeneous transform on pixel coordinates.
///
/// Serializes as nine row-major numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct AffineTransform2D {
    m: [[f64; 3]; 3],
}

impl AffineTransform2D {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Rotation by `theta` followed by translation `(tu, tv)` pixels.
    pub fn rigid(theta: f64, tu: f64, tv: f64) -> Self {
        let (s, c) = sin_cos(theta);
        Self { m: [[c, -s, tu], [s, c, tv], [0.0, 0.0, 1.0]] }
    }

    pub fn translation_px(tu: f64, tv: f64) -> Self {
        Self { m: [[1.0, 0.0, tu], [0.0, 1.0, tv], [0.0, 0.0, 1.0]] }
    }

    /// Builds from a full matrix; the last row must be `(0, 0, 1)` and the
    /// linear block invertible.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(validation("transform has non-finite entries"));
        }
        if m[2] != [0.0, 0.0, 1.0] {
            return Err(validation("transform last row must be (0, 0, 1)"));
        }
        let t = Self { m };
        if t.det().abs() < SINGULAR_EPS {
            return Err(validation("transform is singular"));
        }
        Ok(t)
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn rotation(&self) -> [[f64; 2]; 2] {
        [[self.m[0][0], self.m[0][1]], [self.m[1][0], self.m[1][1]]]
    }

    pub fn translation(&self) -> (f64, f64) {
        (self.m[0][2], self.m[1][2])
    }

    /// Determinant of the linear block.
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Whether the linear block is orthonormal within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let [[a, b], [c, d]] = self.rotation();
        (a * a + c * c - 1.0).abs() <= tol && (b * b + d * d - 1.0).abs() <= tol && (a * b + c * d).abs() <= tol
    }

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * u + m[0][1] * v + m[0][2], m[1][0] * u + m[1][1] * v + m[1][2])
    }

    pub fn to_array(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }
}

impl Default for AffineTransform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[f64; 9]> for AffineTransform2D {
    type Error = Error;

    fn try_from(a: [f64; 9]) -> Result<Self> {
        Self::from_matrix([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }
}

impl From<AffineTransform2D> for [f64; 9] {
    fn from(t: AffineTransform2D) -> Self {
        t.to_array()
    }
}

/// Transform taking pixel coordinates in the `pose_prev` grid to pixel
/// coordinates in the `pose_curr` grid.
///
/// The rotation block is `R(yaw_prev - yaw_curr)`; the translation is the
/// pose difference expressed in the current frame, in cells.
pub fn derive_transform(pose_prev: &PoseSE2, pose_curr: &PoseSE2, resolution: f64) -> Result<AffineTransform2D> {
    if !(resolution > 0.0) {
        return Err(validation("resolution must be positive"));
    }
    let (tx, ty) = pose_curr.world_to_local(pose_prev.x, pose_prev.y);
    Ok(AffineTransform2D::rigid(pose_prev.yaw - pose_curr.yaw, tx / resolution, ty / resolution))
}

/// Matrix product `a * b`: apply `b` first, then `a`.
pub fn compose(a: &AffineTransform2D, b: &AffineTransform2D) -> AffineTransform2D {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a.m[i][k] * b.m[k][j]).sum();
        }
    }
    AffineTransform2D { m }
}

pub fn invert(t: &AffineTransform2D) -> Result<AffineTransform2D> {
    let det = t.det();
    if !(det.abs() >= SINGULAR_EPS) {
        return Err(validation("cannot invert a singular transform"));
    }
    let [[a, b], [c, d]] = t.rotation();
    let (tu, tv) = t.translation();
    let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
    Ok(AffineTransform2D {
        m: [[ia, ib, -(ia * tu + ib * tv)], [ic, id, -(ic * tu + id * tv)], [0.0, 0.0, 1.0]],
    })
}

/// Resamples every channel so that output pixel `q` holds the input at
/// `transform^-1 q`, bilinearly, with zeros outside the grid.
///
/// The timestamp advances by one; the pose is left for the caller to set.
pub fn warp_feature(feature: &FeatureMap, transform: &AffineTransform2D) -> Result<FeatureMap> {
    feature.validate()?;
    let data = warp_tensor(&feature.data, transform)?;
    let out = FeatureMap::new(feature.agent_id, feature.timestamp + 1, feature.pose, feature.resolution, data);
    out.check_finite(Stage::Warp)?;
    Ok(out)
}

/// Warps a feature from its own pose into `pose_curr` and relabels it.
pub fn warp_to_pose(feature: &FeatureMap, pose_curr: &PoseSE2) -> Result<FeatureMap> {
    let t = derive_transform(&feature.pose, pose_curr, feature.resolution)?;
    let mut out = warp_feature(feature, &t)?;
    out.pose = *pose_curr;
    Ok(out)
}

pub fn warp_tensor(input: &Tensor3, transform: &AffineTransform2D) -> Result<Tensor3> {
    let inv = invert(transform)?;
    let (channels, rows, cols) = input.shape();
    let (cu, cv) = ((cols / 2) as f64, (rows / 2) as f64);
    let mut out = Tensor3::zeros(channels, rows, cols);
    let plane = rows * cols;
    let src = input.as_slice();
    let dst = out.as_mut_slice();
    for row in 0..rows {
        for col in 0..cols {
            let (u, v) = inv.apply(col as f64 - cu, row as f64 - cv);
            let (x, y) = (u + cu, v + cv);
            let (x0, y0) = (floor(x), floor(y));
            let (fx, fy) = (x - x0, y - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            let cell = row * cols + col;
            for (tx, ty, w) in taps {
                if w == 0.0 || tx < 0.0 || ty < 0.0 || tx >= cols as f64 || ty >= rows as f64 {
                    continue;
                }
                let s = ty as usize * cols + tx as usize;
                for c in 0..channels {
                    dst[c * plane + cell] += w * src[c * plane + s];
                }
            }
        }
    }
    Ok(out)
}
