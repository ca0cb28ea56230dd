//! Post-processing sweeps and a sampling-consensus defense.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cpfreeze_core::attack::{AttackConfig, AttackKind};
use cpfreeze_core::metrics::{average_precision, detection_jaccard, RoiSummary};
use cpfreeze_core::scenario::Scenario;
use cpfreeze_core::{run_pipeline, Clock, Error, FeatureMap, PostProcess, ProposalBox, TimingBreakdown};

use crate::experiment::{craft, evaluate_frame, frame_inputs, Detector, FrameRecord, RunReport};
use crate::timing::{measure_paired, TimingPlan};

fn validation(msg: &str) -> Error {
    Error::Validation(msg.into())
}

/// Values to sweep. Every combination is one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub score_thresholds: Vec<f64>,
    pub iou_thresholds: Vec<f64>,
    pub max_keep: Vec<usize>,
}

impl SweepGrid {
    pub fn points(&self) -> Vec<PostProcess> {
        let mut out = Vec::new();
        for &score_threshold in &self.score_thresholds {
            for &iou_threshold in &self.iou_thresholds {
                for &max_keep in &self.max_keep {
                    out.push(PostProcess { score_threshold, iou_threshold, max_keep });
                }
            }
        }
        out
    }
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { score_thresholds: vec![0.2], iou_thresholds: vec![0.05, 0.15, 0.30], max_keep: vec![1000, 500, 250, 125] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub post: PostProcess,
    pub roi_latency: Option<RoiSummary>,
    pub roi_proposals: Option<RoiSummary>,
    pub roi_iou_evaluations: Option<RoiSummary>,
    pub median_pre_nms_attacked: f64,
    pub mean_nms_input_attacked: f64,
    pub mean_ap_benign: f64,
    pub mean_ap_attacked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub attack: AttackKind,
    pub warp: bool,
    pub points: Vec<AblationPoint>,
}

impl AblationReport {
    pub fn point(&self, post: &PostProcess) -> Option<&AblationPoint> {
        self.points.iter().find(|p| p.post == *post)
    }
}

/// Crafts one perturbation per frame against `detector`'s own settings, then
/// replays the same perturbations under every post-processing grid point.
///
/// Post-processing only changes what happens after the head, so the
/// perturbation is optimized once and shared across points.
pub fn sweep_postprocess(
    scenario: &Scenario,
    detector: &Detector,
    attack: AttackKind,
    attack_cfg: &AttackConfig,
    warp: bool,
    grid: &SweepGrid,
    timing: Option<TimingPlan>,
) -> cpfreeze_core::Result<AblationReport> {
    let points = grid.points();
    if points.is_empty() {
        return Err(validation("ablation grid is empty"));
    }
    attack_cfg.validate()?;
    let mut crafted = Vec::with_capacity(scenario.n_frames.saturating_sub(1));
    for frame in 1..scenario.n_frames {
        let inputs = frame_inputs(scenario, frame, warp)?;
        let p = craft(attack, &inputs, detector, attack_cfg)?;
        crafted.push((inputs, p));
    }
    let mut out = Vec::with_capacity(points.len());
    for post in points {
        let det = detector.with_post(post);
        let frames: Vec<FrameRecord> = crafted
            .iter()
            .map(|(inputs, p)| evaluate_frame(inputs, &det, p.as_ref(), timing))
            .collect::<cpfreeze_core::Result<_>>()?;
        let nms_in = frames.iter().map(|f| f.attacked.nms_input as f64).sum::<f64>() / frames.len().max(1) as f64;
        let report = RunReport::from_frames(scenario.seed, attack, warp, 0.0, frames);
        out.push(AblationPoint {
            post,
            roi_latency: report.roi_latency,
            roi_proposals: report.roi_proposals,
            roi_iou_evaluations: report.roi_iou_evaluations,
            median_pre_nms_attacked: report.median_pre_nms_attacked,
            mean_nms_input_attacked: nms_in,
            mean_ap_benign: report.mean_ap_benign,
            mean_ap_attacked: report.mean_ap_attacked,
        });
    }
    Ok(AblationReport { seed: scenario.seed, attack, warp, points: out })
}

/// Sampling-consensus settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobosacConfig {
    pub iterations: usize,
    /// Collaborators drawn per iteration; the ego is always included.
    pub subset_size: usize,
    /// Box IoU at which two detections count as the same object.
    pub consensus_iou: f64,
    /// Detection-set Jaccard needed to accept a subset.
    pub accept_jaccard: f64,
    pub seed: u64,
}

impl Default for RobosacConfig {
    fn default() -> Self {
        Self { iterations: 8, subset_size: 1, consensus_iou: 0.5, accept_jaccard: 0.7, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobosacOutput {
    pub detections: Vec<ProposalBox>,
    /// Sum over every inner pipeline run, the ego-only reference included.
    pub timing: TimingBreakdown,
    pub pipeline_runs: usize,
    /// Agent ids of the accepted subset (ego first), or `None` if every
    /// sampled subset disagreed with the ego and the ego-only result was used.
    pub accepted: Option<Vec<u32>>,
    pub jaccards: Vec<f64>,
}

/// RANSAC-style consensus over collaborator subsets.
///
/// `features[0]` is the ego. The ego-only result is the reference; each
/// iteration fuses the ego with `subset_size` randomly drawn collaborators
/// and accepts the subset if its detections agree with the reference. All
/// `iterations` run. The largest accepted subset wins, the earliest among
/// equals.
pub fn robosac_consensus<C: Clock + ?Sized>(
    features: &[FeatureMap],
    detector: &Detector,
    cfg: &RobosacConfig,
    clock: &C,
) -> cpfreeze_core::Result<RobosacOutput> {
    if cfg.iterations == 0 {
        return Err(validation("robosac needs at least one sampling iteration"));
    }
    if features.is_empty() || cfg.subset_size >= features.len() {
        return Err(validation("robosac subset size must be smaller than the agent count"));
    }
    let mut timing = TimingBreakdown::default();
    let run = |maps: &[FeatureMap], timing: &mut TimingBreakdown| -> cpfreeze_core::Result<Vec<ProposalBox>> {
        let out = run_pipeline(maps, &detector.head, &detector.anchors, &detector.post, clock)?;
        timing.accumulate(&out.timing);
        Ok(out.detections)
    };
    let reference = run(&features[..1], &mut timing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let collaborators: Vec<usize> = (1..features.len()).collect();
    let mut best: Option<(Vec<usize>, Vec<ProposalBox>)> = None;
    let mut jaccards = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut chosen: Vec<usize> = collaborators.choose_multiple(&mut rng, cfg.subset_size).copied().collect();
        chosen.sort_unstable();
        let maps: Vec<FeatureMap> =
            std::iter::once(&features[0]).chain(chosen.iter().map(|&i| &features[i])).cloned().collect();
        let dets = run(&maps, &mut timing)?;
        let j = detection_jaccard(&dets, &reference, cfg.consensus_iou);
        jaccards.push(j);
        let larger = best.as_ref().is_none_or(|(b, _)| chosen.len() > b.len());
        if j >= cfg.accept_jaccard && larger {
            best = Some((chosen, dets));
        }
    }
    let pipeline_runs = cfg.iterations + 1;
    Ok(match best {
        Some((chosen, detections)) => {
            let mut ids = vec![features[0].agent_id];
            ids.extend(chosen.iter().map(|&i| features[i].agent_id));
            RobosacOutput { detections, timing, pipeline_runs, accepted: Some(ids), jaccards }
        }
        None => RobosacOutput { detections: reference, timing, pipeline_runs, accepted: None, jaccards },
    })
}

/// One frame of the defended-versus-undefended comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseFrame {
    pub frame: usize,
    /// Median latency of one pipeline pass on the attacked maps.
    pub undefended_latency_s: f64,
    /// Median latency of the whole consensus procedure on the same maps.
    pub defended_latency_s: f64,
    pub pipeline_runs: usize,
    pub accepted: Option<Vec<u32>>,
    pub ap_benign: f64,
    pub ap_undefended: f64,
    pub ap_defended: f64,
}

impl DefenseFrame {
    pub fn amplification(&self) -> Option<f64> {
        (self.undefended_latency_s > 0.0).then(|| self.defended_latency_s / self.undefended_latency_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub seed: u64,
    pub attack: AttackKind,
    pub warp: bool,
    pub robosac: RobosacConfig,
    pub frames: Vec<DefenseFrame>,
    pub mean_amplification: Option<f64>,
    pub mean_ap_benign: f64,
    pub mean_ap_undefended: f64,
    pub mean_ap_defended: f64,
}

/// Crafts the attack per frame, then runs the consensus defense on the
/// attacked maps next to a plain pipeline pass. With `timing`, both are
/// timed in alternation.
pub fn run_defense(
    scenario: &Scenario,
    detector: &Detector,
    attack: AttackKind,
    attack_cfg: &AttackConfig,
    warp: bool,
    robosac: &RobosacConfig,
    timing: Option<TimingPlan>,
) -> cpfreeze_core::Result<DefenseReport> {
    attack_cfg.validate()?;
    let mut frames = Vec::new();
    for frame in 1..scenario.n_frames {
        let inputs = frame_inputs(scenario, frame, warp)?;
        let p = craft(attack, &inputs, detector, attack_cfg)?;
        let maps = match &p {
            Some(p) => inputs.perturbed(&p.delta)?,
            None => inputs.current.clone(),
        };
        let defended = robosac_consensus(&maps, detector, robosac, &cpfreeze_core::NoClock)?;
        let undefended = detector.run(&maps)?;
        let benign = detector.run(&inputs.current)?;
        let (lat_u, lat_d) = match timing {
            Some(plan) => {
                let (u, d) = measure_paired(
                    || {
                        std::hint::black_box(detector.run(&maps).expect("inputs validated above"));
                    },
                    || {
                        std::hint::black_box(
                            robosac_consensus(&maps, detector, robosac, &cpfreeze_core::NoClock)
                                .expect("inputs validated above"),
                        );
                    },
                    plan,
                );
                (u.median, d.median)
            }
            None => (0.0, 0.0),
        };
        let ap = |d: &[ProposalBox]| average_precision(d, &inputs.ground_truth, 0.5);
        frames.push(DefenseFrame {
            frame,
            undefended_latency_s: lat_u,
            defended_latency_s: lat_d,
            pipeline_runs: defended.pipeline_runs,
            accepted: defended.accepted,
            ap_benign: ap(&benign.detections),
            ap_undefended: ap(&undefended.detections),
            ap_defended: ap(&defended.detections),
        });
    }
    let mean = |f: &dyn Fn(&DefenseFrame) -> f64| frames.iter().map(f).sum::<f64>() / frames.len().max(1) as f64;
    let amps: Vec<f64> = frames.iter().filter_map(DefenseFrame::amplification).collect();
    Ok(DefenseReport {
        seed: scenario.seed,
        attack,
        warp,
        robosac: *robosac,
        mean_amplification: (!amps.is_empty()).then(|| amps.iter().sum::<f64>() / amps.len() as f64),
        mean_ap_benign: mean(&|f| f.ap_benign),
        mean_ap_undefended: mean(&|f| f.ap_undefended),
        mean_ap_defended: mean(&|f| f.ap_defended),
        frames,
    })
}
