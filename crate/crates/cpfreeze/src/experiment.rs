//! Per-frame online attack against a victim whose features reach the
//! attacker one frame late.
//!
//! At frame `t` the attacker holds every collaborator's map from `t - 1`
//! (aligned to the victim's `t - 1` pose), optionally warps them to the
//! victim's pose at `t`, optimizes `delta` against that prediction and adds
//! it to its own current map. The victim then runs on the true frame-`t`
//! maps with the perturbed attacker map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use cpfreeze_core::attack::{
    bim_optimize, AttackConfig, AttackKind, AttackSurface, CpFreezerLoss, Objective, Perturbation, PgdLoss,
    PriorArtLoss, TraceStep,
};
use cpfreeze_core::metrics::{average_precision, median, summarize_roi, attack_success_rate, LatencyStats, RoiSummary};
use cpfreeze_core::scenario::{encode_bev_features, encode_in_frame, ground_truth, synth_head_weights, Role, Scenario};
use cpfreeze_core::warp::{derive_transform, warp_tensor};
use cpfreeze_core::{
    run_pipeline, AnchorConfig, FeatureMap, HeadWeights, NoClock, PipelineOutput, PoseSE2, PostProcess, ProposalBox, Tensor3,
    TimingBreakdown,
};

use crate::timing::{measure_latency, measure_paired, MonotonicClock, TimingPlan};

/// The victim's detector.
#[derive(Debug, Clone)]
pub struct Detector {
    pub head: HeadWeights,
    pub anchors: AnchorConfig,
    pub post: PostProcess,
}

impl Detector {
    /// The synthetic head and car anchors matched to a scenario's grid.
    pub fn for_scenario(scenario: &Scenario, post: PostProcess) -> cpfreeze_core::Result<Self> {
        let anchors = AnchorConfig::car_default(scenario.grid.resolution);
        let head = synth_head_weights(&anchors, &scenario.grid)?;
        Ok(Self { head, anchors, post })
    }

    pub fn run(&self, features: &[FeatureMap]) -> cpfreeze_core::Result<PipelineOutput> {
        run_pipeline(features, &self.head, &self.anchors, &self.post, &NoClock)
    }

    pub fn with_post(&self, post: PostProcess) -> Self {
        Self { post, ..self.clone() }
    }

    /// Median wall time of the whole pipeline plus one timed breakdown.
    pub fn timed(&self, features: &[FeatureMap], plan: TimingPlan) -> cpfreeze_core::Result<(LatencyStats, PipelineOutput)> {
        let out = run_pipeline(features, &self.head, &self.anchors, &self.post, &MonotonicClock::new())?;
        let stats = measure_latency(
            || {
                std::hint::black_box(self.run(features).expect("inputs validated above"));
            },
            plan,
        );
        Ok((stats, out))
    }
}

/// What one frame looks like to the victim and to the attacker.
#[derive(Debug, Clone)]
pub struct FrameInputs {
    pub frame: usize,
    /// Current maps in fusion order: victim first, attacker last.
    pub current: Vec<FeatureMap>,
    /// Attacker's prediction of every non-attacker map, same order.
    pub predicted_others: Vec<Tensor3>,
    /// Attacker's prediction of its own aligned map.
    pub predicted_attacker: Tensor3,
    /// Ground truth in the victim frame.
    pub ground_truth: Vec<ProposalBox>,
}

impl FrameInputs {
    pub fn attacker_index(&self) -> usize {
        self.current.len() - 1
    }

    /// Current maps with `delta` added to the attacker's.
    pub fn perturbed(&self, delta: &Tensor3) -> cpfreeze_core::Result<Vec<FeatureMap>> {
        let mut maps = self.current.clone();
        let a = self.attacker_index();
        maps[a].data = maps[a].data.add(delta)?;
        Ok(maps)
    }
}

/// Agent ids in fusion order: victim, benign collaborators, attacker.
pub fn fusion_order(scenario: &Scenario) -> Vec<u32> {
    let mut ids = vec![scenario.victim().id];
    ids.extend(scenario.agents.iter().filter(|a| a.role == Role::Benign).map(|a| a.id));
    ids.push(scenario.attacker().id);
    ids
}

/// Gaussian noise on the victim pose the attacker receives, per frame.
/// Zero standard deviations (the default) mean exact poses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseNoise {
    pub xy_std_m: f64,
    pub yaw_std_rad: f64,
    pub seed: u64,
}

impl PoseNoise {
    pub fn is_off(&self) -> bool {
        self.xy_std_m == 0.0 && self.yaw_std_rad == 0.0
    }

    fn apply(&self, pose: PoseSE2, frame: usize) -> cpfreeze_core::Result<PoseSE2> {
        if self.is_off() {
            return Ok(pose);
        }
        let bad = |_| cpfreeze_core::Error::Validation("pose noise deviations must be finite and non-negative".into());
        let xy = Normal::new(0.0, self.xy_std_m).map_err(bad)?;
        let yaw = Normal::new(0.0, self.yaw_std_rad).map_err(bad)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ frame as u64);
        Ok(PoseSE2::new(pose.x + xy.sample(&mut rng), pose.y + xy.sample(&mut rng), pose.yaw + yaw.sample(&mut rng)))
    }
}

/// Builds frame `frame >= 1`. With `warp`, stale maps are moved from the
/// victim's previous pose to its current one.
pub fn frame_inputs(scenario: &Scenario, frame: usize, warp: bool) -> cpfreeze_core::Result<FrameInputs> {
    frame_inputs_with_noise(scenario, frame, warp, &PoseNoise::default())
}

/// [`frame_inputs`] with the warp derived from a noisy copy of the victim's
/// current pose.
pub fn frame_inputs_with_noise(
    scenario: &Scenario,
    frame: usize,
    warp: bool,
    noise: &PoseNoise,
) -> cpfreeze_core::Result<FrameInputs> {
    if frame == 0 {
        return Err(cpfreeze_core::Error::Validation("the online attack starts at frame 1".into()));
    }
    let victim = scenario.victim().id;
    let pose_now = scenario.pose(victim, frame)?;
    let pose_prev = scenario.pose(victim, frame - 1)?;
    let ids = fusion_order(scenario);
    let current = ids
        .iter()
        .map(|&id| if id == victim { encode_bev_features(scenario, frame, id) } else { encode_in_frame(scenario, frame, id, &pose_now) })
        .collect::<cpfreeze_core::Result<Vec<_>>>()?;
    let transform = derive_transform(&pose_prev, &noise.apply(pose_now, frame)?, scenario.grid.resolution)?;
    let mut predicted = ids
        .iter()
        .map(|&id| {
            let stale = encode_in_frame(scenario, frame - 1, id, &pose_prev)?;
            if warp {
                warp_tensor(&stale.data, &transform)
            } else {
                Ok(stale.data)
            }
        })
        .collect::<cpfreeze_core::Result<Vec<_>>>()?;
    let predicted_attacker = predicted.pop().expect("fusion order ends with the attacker");
    Ok(FrameInputs {
        frame,
        current,
        predicted_others: predicted,
        predicted_attacker,
        ground_truth: ground_truth(scenario, frame, victim)?,
    })
}

/// Optimizes the attacker's perturbation for one frame; `None` for no attack.
pub fn craft(kind: AttackKind, inputs: &FrameInputs, detector: &Detector, cfg: &AttackConfig) -> cpfreeze_core::Result<Option<Perturbation>> {
    let mut surface =
        AttackSurface::new(&inputs.predicted_others, &inputs.predicted_attacker, &detector.head, &detector.anchors);
    surface.count_threshold = detector.post.score_threshold;
    let objective: Box<dyn Objective> = match kind {
        AttackKind::None => return Ok(None),
        AttackKind::CpFreezer => Box::new(CpFreezerLoss { cfg: *cfg }),
        AttackKind::PriorArt => Box::new(PriorArtLoss { select_threshold: cfg.tau }),
        AttackKind::Pgd => {
            let (c, h, w) = surface.shape();
            let benign = surface.forward(&Tensor3::zeros(c, h, w))?.scores;
            Box::new(PgdLoss { benign_scores: benign })
        }
    };
    bim_optimize(&surface, objective.as_ref(), cfg).map(Some)
}

/// Counters for one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunCounters {
    pub latency_s: f64,
    pub pre_nms: usize,
    pub nms_input: usize,
    pub post_nms: usize,
    pub iou_evaluations: u64,
    pub ap: f64,
    pub breakdown: TimingBreakdown,
}

impl RunCounters {
    fn from_output(latency_s: f64, out: &PipelineOutput, gt: &[ProposalBox]) -> Self {
        Self {
            latency_s,
            pre_nms: out.pre_nms_count,
            nms_input: out.nms_input_count,
            post_nms: out.detections.len(),
            iou_evaluations: out.nms_stats.iou_evaluations,
            ap: average_precision(&out.detections, gt, 0.5),
            breakdown: out.timing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub benign: RunCounters,
    pub attacked: RunCounters,
    pub initial: Option<TraceStep>,
    pub trace: Vec<TraceStep>,
    pub delta_linf: f64,
}

/// Aggregates over frames. RoIs are averaged per frame; the ratio of means
/// is reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub attack: AttackKind,
    pub warp: bool,
    pub frames: Vec<FrameRecord>,
    pub roi_latency: Option<RoiSummary>,
    pub roi_proposals: Option<RoiSummary>,
    pub roi_iou_evaluations: Option<RoiSummary>,
    pub asr_threshold_s: f64,
    pub asr: f64,
    pub rsd_benign_percent: f64,
    pub rsd_attacked_percent: f64,
    pub median_pre_nms_benign: f64,
    pub median_pre_nms_attacked: f64,
    pub mean_ap_benign: f64,
    pub mean_ap_attacked: f64,
}

impl RunReport {
    pub fn from_frames(seed: u64, attack: AttackKind, warp: bool, asr_threshold_s: f64, frames: Vec<FrameRecord>) -> Self {
        let col = |f: &dyn Fn(&FrameRecord) -> f64| frames.iter().map(f).collect::<Vec<f64>>();
        let lat_b = col(&|r| r.benign.latency_s);
        let lat_a = col(&|r| r.attacked.latency_s);
        let pre_b = col(&|r| r.benign.pre_nms as f64);
        let pre_a = col(&|r| r.attacked.pre_nms as f64);
        let iou_b = col(&|r| r.benign.iou_evaluations as f64);
        let iou_a = col(&|r| r.attacked.iou_evaluations as f64);
        let ap_b = col(&|r| r.benign.ap);
        let ap_a = col(&|r| r.attacked.ap);
        let rsd = |v: &[f64]| LatencyStats::from_samples(v.to_vec()).map(|s| s.rsd_percent).unwrap_or(0.0);
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self {
            seed,
            attack,
            warp,
            roi_latency: summarize_roi(&lat_a, &lat_b),
            roi_proposals: summarize_roi(&pre_a, &pre_b),
            roi_iou_evaluations: summarize_roi(&iou_a, &iou_b),
            asr_threshold_s,
            asr: attack_success_rate(&lat_a, asr_threshold_s).unwrap_or(0.0),
            rsd_benign_percent: rsd(&lat_b),
            rsd_attacked_percent: rsd(&lat_a),
            median_pre_nms_benign: if pre_b.is_empty() { 0.0 } else { median(&pre_b) },
            median_pre_nms_attacked: if pre_a.is_empty() { 0.0 } else { median(&pre_a) },
            mean_ap_benign: mean(&ap_b),
            mean_ap_attacked: mean(&ap_a),
            frames,
        }
    }
}

/// Settings of one online-attack run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub attack: AttackKind,
    pub attack_cfg: AttackConfig,
    pub warp: bool,
    pub pose_noise: PoseNoise,
    /// `None` skips wall-clock measurement; latencies are then zero.
    pub timing: Option<TimingPlan>,
    pub asr_threshold_s: f64,
}

/// Evaluates one crafted frame.
pub fn evaluate_frame(
    inputs: &FrameInputs,
    detector: &Detector,
    perturbation: Option<&Perturbation>,
    timing: Option<TimingPlan>,
) -> cpfreeze_core::Result<FrameRecord> {
    let attacked_maps = match perturbation {
        Some(p) => inputs.perturbed(&p.delta)?,
        None => inputs.current.clone(),
    };
    let benign_out = run_pipeline(&inputs.current, &detector.head, &detector.anchors, &detector.post, &MonotonicClock::new())?;
    let attacked_out = run_pipeline(&attacked_maps, &detector.head, &detector.anchors, &detector.post, &MonotonicClock::new())?;
    let (lat_b, lat_a) = match timing {
        Some(plan) => {
            let (b, a) = measure_paired(
                || {
                    std::hint::black_box(detector.run(&inputs.current).expect("inputs validated above"));
                },
                || {
                    std::hint::black_box(detector.run(&attacked_maps).expect("inputs validated above"));
                },
                plan,
            );
            (b.median, a.median)
        }
        None => (0.0, 0.0),
    };
    let benign = RunCounters::from_output(lat_b, &benign_out, &inputs.ground_truth);
    let attacked = RunCounters::from_output(lat_a, &attacked_out, &inputs.ground_truth);
    Ok(FrameRecord {
        frame: inputs.frame,
        benign,
        attacked,
        initial: perturbation.map(|p| p.initial),
        trace: perturbation.map(|p| p.trace.clone()).unwrap_or_default(),
        delta_linf: perturbation.map(|p| p.linf()).unwrap_or(0.0),
    })
}

/// Runs the online attack over frames `1..n_frames`.
pub fn run_attack(scenario: &Scenario, detector: &Detector, settings: &RunSettings) -> cpfreeze_core::Result<RunReport> {
    settings.attack_cfg.validate()?;
    let mut frames = Vec::with_capacity(scenario.n_frames.saturating_sub(1));
    for frame in 1..scenario.n_frames {
        let inputs = frame_inputs_with_noise(scenario, frame, settings.warp, &settings.pose_noise)?;
        let p = craft(settings.attack, &inputs, detector, &settings.attack_cfg)?;
        frames.push(evaluate_frame(&inputs, detector, p.as_ref(), settings.timing)?);
    }
    Ok(RunReport::from_frames(scenario.seed, settings.attack, settings.warp, settings.asr_threshold_s, frames))
}
