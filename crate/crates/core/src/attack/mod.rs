//! Latency-inducing adversarial optimization over a shared feature map.
//!
//! [`loss`] holds the objectives (the proposal-inflation objective and two
//! baselines), [`grad`] the exact reverse pass from an objective back to the
//! perturbation, and [`bim`] the signed-gradient loop.

pub mod bim;
pub mod grad;
pub mod loss;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::tensor::Tensor3;

pub use bim::bim_optimize;
pub use grad::{grad_wrt_delta, AttackSurface, Evaluation, Forward};
pub use loss::{
    baseline_pgd_loss, baseline_prior_art_loss, loss_conf, loss_shape, loss_total, loss_vertical,
    shape_indicator, vertical_indicator, CpFreezerLoss, LossGrad, Objective, PgdLoss, PriorArtLoss,
};

/// Hyperparameters of the attack objective and its optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Activation cap for the confidence hinge; matches the score threshold.
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub steps: usize,
    pub step_size: f64,
    pub linf_budget: f64,
    pub l_max: f64,
    pub w_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Sigmoid temperature for the smoothed indicator terms.
    pub surrogate_beta: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            lambda1: 0.1,
            lambda2: 1.0,
            steps: 10,
            step_size: 0.1,
            linf_budget: 1.0,
            l_max: 5.0,
            w_max: 5.0,
            z_min: 1.0,
            z_max: 3.0,
            surrogate_beta: 10.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(validation("attack needs at least one step"));
        }
        if !(self.step_size > 0.0) {
            return Err(validation("step size must be positive"));
        }
        if !(self.linf_budget >= 0.0) {
            return Err(validation("perturbation budget must be non-negative"));
        }
        if !(self.z_min < self.z_max) {
            return Err(validation("z_min must be below z_max"));
        }
        if !(self.l_max > 0.0 && self.w_max > 0.0) {
            return Err(validation("shape bounds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(validation("tau must lie in [0, 1]"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(validation("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Which objective drives the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    /// No perturbation.
    None,
    /// Untargeted accuracy degradation against the benign hard labels.
    Pgd,
    /// Unbounded confidence maximization plus pairwise-overlap minimization.
    PriorArt,
    /// Capped confidence activation with shape and elevation plausibility.
    CpFreezer,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Pgd => "pgd",
            AttackKind::PriorArt => "prior-art",
            AttackKind::CpFreezer => "cp-freezer",
        }
    }
}

/// Optimizer state after one signed update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub loss: f64,
    /// Scores at or above `tau` anywhere on the grid.
    pub pre_nms_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub delta: Tensor3,
    /// State before the first update.
    pub initial: TraceStep,
    /// `trace[k]` is the state after update `k + 1`.
    pub trace: Vec<TraceStep>,
}

impl Perturbation {
    pub fn linf(&self) -> f64 {
        self.delta.max_abs()
    }
}
