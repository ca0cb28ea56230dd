//! Core algorithms for a desk-scale laboratory on latency attacks against
//! intermediate-fusion cooperative perception.
//!
//! The victim pipeline is attention fusion of per-agent BEV feature maps,
//! a convolutional detection head, anchor decoding, confidence filtering and
//! greedy rotated-box NMS. The attack side perturbs one agent's shared
//! feature map with signed-gradient steps on a latency-inducing objective,
//! optionally after warping stale features into the current frame.
//!
//! Everything here is `no_std` + `alloc`: no clocks, no files. Wall-clock
//! timing is injected through [`pipeline::Clock`], and the `cpfreeze` crate
//! supplies the monotonic clock, file formats and the command line.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod anchors;
pub mod attack;
pub mod error;
pub mod feature;
pub mod fusion;
pub mod geometry;
pub mod head;
mod math;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod postprocess;
pub mod scenario;
pub mod tensor;
pub mod warp;

pub use anchors::{decode_proposals, AnchorConfig, AnchorPrior, ProposalBox, SourceIndex};
pub use error::{Error, Result, Stage};
pub use feature::FeatureMap;
pub use fusion::fuse_attention;
pub use geometry::rotated_iou;
pub use head::{apply_inference_head, HeadWeights, RawPrediction};
pub use pipeline::{run_pipeline, Clock, NoClock, PipelineOutput, PostProcess, TimingBreakdown};
pub use pose::PoseSE2;
pub use postprocess::{confidence_filter, nms, NmsStats};
pub use tensor::Tensor3;
pub use warp::AffineTransform2D;
