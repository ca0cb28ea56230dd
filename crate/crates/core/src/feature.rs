use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result, Stage};
use crate::pose::PoseSE2;
use crate::tensor::Tensor3;

/// BEV feature grid produced (or received) by one agent.
///
/// Grid convention: column index grows with +x, row index with +y, and the
/// cell at `(rows / 2, cols / 2)` is centered on the pose origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub agent_id: u32,
    pub timestamp: u32,
    pub pose: PoseSE2,
    /// Meters per grid cell.
    pub resolution: f64,
    pub data: Tensor3,
}

impl FeatureMap {
    pub fn new(agent_id: u32, timestamp: u32, pose: PoseSE2, resolution: f64, data: Tensor3) -> Self {
        Self { agent_id, timestamp, pose, resolution, data }
    }

    pub fn zeros(agent_id: u32, timestamp: u32, pose: PoseSE2, resolution: f64, shape: (usize, usize, usize)) -> Self {
        Self::new(agent_id, timestamp, pose, resolution, Tensor3::zeros(shape.0, shape.1, shape.2))
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.shape()
    }

    /// Checks the boundary invariants: positive dimensions and finite entries.
    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.shape();
        if c == 0 || h == 0 || w == 0 {
            return Err(structural("feature map has an empty dimension"));
        }
        if !self.data.is_finite() {
            return Err(Error::Validation("feature map contains non-finite entries".into()));
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self, stage: Stage) -> Result<()> {
        if self.data.is_finite() {
            Ok(())
        } else {
            Err(Error::Numerical { stage })
        }
    }

    /// Metric center of a grid cell relative to the pose origin.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        cell_center(self.data.rows(), self.data.cols(), self.resolution, row, col)
    }
}

#[inline]
pub(crate) fn cell_center(rows: usize, cols: usize, resolution: f64, row: usize, col: usize) -> (f64, f64) {
    let x = (col as f64 - (cols / 2) as f64) * resolution;
    let y = (row as f64 - (rows / 2) as f64) * resolution;
    (x, y)
}
