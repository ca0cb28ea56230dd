//! The victim's end-to-end detection pass with per-stage timing.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::anchors::{decode_above, AnchorConfig, ProposalBox};
use crate::error::{structural, Result};
use crate::feature::FeatureMap;
use crate::fusion::fuse_attention;
use crate::head::{apply_inference_head, HeadWeights};
use crate::postprocess::{confidence_filter, nms, NmsStats};

/// Source of monotonic timestamps in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that never advances, for untimed runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Post-processing hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcess {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub max_keep: usize,
}

impl Default for PostProcess {
    fn default() -> Self {
        Self { score_threshold: 0.2, iou_threshold: 0.15, max_keep: 1000 }
    }
}

/// Wall time per stage, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub fusion: f64,
    pub head: f64,
    pub decode: f64,
    pub filter: f64,
    pub nms: f64,
    pub total: f64,
}

impl TimingBreakdown {
    pub fn accumulate(&mut self, other: &TimingBreakdown) {
        self.fusion += other.fusion;
        self.head += other.head;
        self.decode += other.decode;
        self.filter += other.filter;
        self.nms += other.nms;
        self.total += other.total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub detections: Vec<ProposalBox>,
    pub timing: TimingBreakdown,
    pub nms_stats: NmsStats,
    /// Proposals at or above the score threshold, before the top-K cap.
    pub pre_nms_count: usize,
    /// Proposals handed to NMS after the cap.
    pub nms_input_count: usize,
}

/// fuse -> head -> decode -> filter/cap -> NMS. The first feature is the ego.
pub fn run_pipeline<C: Clock + ?Sized>(
    features: &[FeatureMap],
    head: &HeadWeights,
    anchors: &AnchorConfig,
    post: &PostProcess,
    clock: &C,
) -> Result<PipelineOutput> {
    if features.is_empty() {
        return Err(structural("pipeline needs at least one feature map"));
    }
    let t0 = clock.now();
    let fused = fuse_attention(features, 0)?;
    let t1 = clock.now();
    let raw = apply_inference_head(&fused, head)?;
    let t2 = clock.now();
    // Only cells that pass the confidence threshold are decoded.
    let proposals = decode_above(&raw, anchors, post.score_threshold)?;
    let t3 = clock.now();
    let pre_nms_count = proposals.len();
    let filtered = confidence_filter(&proposals, post.score_threshold, post.max_keep);
    let t4 = clock.now();
    let (detections, mut nms_stats) = nms(&filtered, post.iou_threshold);
    let t5 = clock.now();
    nms_stats.wall_time_s = t5 - t4;
    Ok(PipelineOutput {
        detections,
        timing: TimingBreakdown {
            fusion: t1 - t0,
            head: t2 - t1,
            decode: t3 - t2,
            filter: t4 - t3,
            nms: t5 - t4,
            total: t5 - t0,
        },
        nms_stats,
        pre_nms_count,
        nms_input_count: filtered.len(),
    })
}
