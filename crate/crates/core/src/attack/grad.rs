//! Exact reverse pass from an objective back to the attacker's perturbation.
//!
//! The path is fuse -> head -> sigmoid / decode -> objective. Fusion and
//! the head are linear-algebra kernels with hand-written vector-Jacobian
//! products; nothing here depends on the discrete filter or NMS.

use alloc::vec::Vec;

use crate::anchors::{decode_backward, decode_proposals, AnchorConfig, ProposalBox};
use crate::error::{structural, Error, Result, Stage};
use crate::feature::FeatureMap;
use crate::fusion::{fuse_backward, fuse_tensors};
use crate::head::{head_backward, head_forward, HeadWeights, RawPrediction};
use crate::tensor::Tensor3;

use super::loss::{CpFreezerLoss, Objective};
use super::AttackConfig;

/// Everything the attacker holds fixed while optimizing `delta`.
///
/// `others` are the non-attacker inputs in fusion order, victim (ego) first.
/// The perturbed attacker map `attacker + delta` is fused last.
#[derive(Debug, Clone, Copy)]
pub struct AttackSurface<'a> {
    pub others: &'a [Tensor3],
    pub attacker: &'a Tensor3,
    pub head: &'a HeadWeights,
    pub anchors: &'a AnchorConfig,
    /// Threshold used for the reported proposal count.
    pub count_threshold: f64,
}

/// Decoded victim output for one perturbation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub scores: Vec<f64>,
    pub boxes: Vec<ProposalBox>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    /// dL/d(delta); present when requested.
    pub grad: Option<Tensor3>,
    /// Proposals at or above `count_threshold`.
    pub pre_nms_count: usize,
}

struct Tape {
    inputs: Vec<Tensor3>,
    cache: crate::fusion::FusionCache,
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    boxes: Vec<ProposalBox>,
}

impl<'a> AttackSurface<'a> {
    pub fn new(others: &'a [Tensor3], attacker: &'a Tensor3, head: &'a HeadWeights, anchors: &'a AnchorConfig) -> Self {
        Self { others, attacker, head, anchors, count_threshold: 0.2 }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.attacker.shape()
    }

    fn run(&self, delta: &Tensor3) -> Result<Tape> {
        if self.others.is_empty() {
            return Err(structural("attack surface needs the victim feature"));
        }
        let perturbed = self.attacker.add(delta)?;
        let mut inputs: Vec<Tensor3> = self.others.to_vec();
        inputs.push(perturbed);
        let refs: Vec<&Tensor3> = inputs.iter().collect();
        let (fused, cache) = fuse_tensors(&refs, 0)?;
        let out = head_forward(&fused, self.head)?;
        let raw = RawPrediction::from_head_output(&out, self.head.anchors());
        let boxes = decode_proposals(&raw, self.anchors)?;
        if boxes.iter().any(|b| !b.params().iter().all(|v| v.is_finite())) {
            return Err(Error::Numerical { stage: Stage::Decode });
        }
        let (_, rows, cols) = fused.shape();
        Ok(Tape { inputs, cache, rows, cols, scores: raw.scores, boxes })
    }

    /// Victim-side scores and boxes under `delta`, in flat source order.
    pub fn forward(&self, delta: &Tensor3) -> Result<Forward> {
        let tape = self.run(delta)?;
        Ok(Forward { scores: tape.scores, boxes: tape.boxes })
    }

    pub fn evaluate(&self, delta: &Tensor3, objective: &dyn Objective, need_grad: bool) -> Result<Evaluation> {
        let tape = self.run(delta)?;
        let pre_nms_count = tape.scores.iter().filter(|&&s| s >= self.count_threshold).count();
        let (loss, lg) = objective.value_and_grad(&tape.scores, &tape.boxes);
        if !loss.is_finite()
            || !lg.scores.iter().all(|v| v.is_finite())
            || !lg.boxes.iter().flatten().all(|v| v.is_finite())
        {
            return Err(Error::Numerical { stage: Stage::Loss });
        }
        if !need_grad {
            return Ok(Evaluation { loss, grad: None, pre_nms_count });
        }

        let anchors = self.head.anchors();
        let plane = tape.rows * tape.cols;
        let mut grad_out = Tensor3::zeros(self.head.out_channels(), tape.rows, tape.cols);
        {
            let g = grad_out.as_mut_slice();
            for (k, (&gs, &s)) in lg.scores.iter().zip(&tape.scores).enumerate() {
                g[k] = gs * s * (1.0 - s);
            }
            let reg = decode_backward(&tape.boxes, &lg.boxes, self.anchors, tape.rows, tape.cols);
            g[anchors * plane..].copy_from_slice(&reg);
        }
        let grad_fused = head_backward(&grad_out, self.head);
        let refs: Vec<&Tensor3> = tape.inputs.iter().collect();
        let mut grads = fuse_backward(&refs, 0, &tape.cache, &grad_fused);
        let grad = grads.pop().expect("fusion has at least two inputs");
        if !grad.is_finite() {
            return Err(Error::Numerical { stage: Stage::Backward });
        }
        Ok(Evaluation { loss, grad: Some(grad), pre_nms_count })
    }
}

/// Gradient of the proposal-inflation objective with respect to `delta`.
///
/// `victim_features` are the non-attacker maps, victim first, already
/// aligned to the victim frame.
pub fn grad_wrt_delta(
    victim_features: &[FeatureMap],
    attacker_feature: &FeatureMap,
    delta: &Tensor3,
    head: &HeadWeights,
    anchors: &AnchorConfig,
    cfg: &AttackConfig,
) -> Result<Tensor3> {
    for f in victim_features.iter().chain(core::iter::once(attacker_feature)) {
        f.validate()?;
    }
    let others: Vec<Tensor3> = victim_features.iter().map(|f| f.data.clone()).collect();
    let mut surface = AttackSurface::new(&others, &attacker_feature.data, head, anchors);
    surface.count_threshold = cfg.tau;
    let eval = surface.evaluate(delta, &CpFreezerLoss { cfg: *cfg }, true)?;
    Ok(eval.grad.expect("gradient requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::AnchorPrior;
    use crate::attack::loss::{PgdLoss, PriorArtLoss};
    use crate::math::{exp, sigmoid};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, scale: f64) -> Tensor3 {
        Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-scale..scale))
    }

    fn random_head(rng: &mut ChaCha8Rng, c: usize, b: usize, k: usize) -> HeadWeights {
        let mut head = HeadWeights::zeros(c, b, k).unwrap();
        head.weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-0.4..0.4));
        head.biases_mut().iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        head
    }

    fn central_difference(surface: &AttackSurface, delta: &Tensor3, obj: &dyn Objective, idx: usize, h: f64) -> f64 {
        let mut plus = delta.clone();
        plus.as_mut_slice()[idx] += h;
        let mut minus = delta.clone();
        minus.as_mut_slice()[idx] -= h;
        let fp = surface.evaluate(&plus, obj, false).unwrap().loss;
        let fm = surface.evaluate(&minus, obj, false).unwrap().loss;
        (fp - fm) / (2.0 * h)
    }

    #[test]
    fn zero_head_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let others = vec![random_tensor(&mut rng, 4, 5, 5, 1.0)];
        let attacker = random_tensor(&mut rng, 4, 5, 5, 1.0);
        let head = HeadWeights::zeros(4, 2, 3).unwrap();
        let anchors = AnchorConfig::car_default(0.4);
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        let delta = random_tensor(&mut rng, 4, 5, 5, 0.3);
        let eval = surface.evaluate(&delta, &CpFreezerLoss { cfg: AttackConfig::default() }, true).unwrap();
        assert!(eval.grad.unwrap().as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_cell_hand_chain() {
        // one channel, one cell, one anchor, 1x1 kernel
        let (v, a, d) = (0.7, -0.2, 0.35);
        let (ws, bs, wl, bl, wz, bz) = (1.3, -1.0, 0.9, 0.2, -0.8, 0.6);
        let mut head = HeadWeights::zeros(1, 1, 1).unwrap();
        head.set_weight(0, 0, 0, 0, ws);
        head.set_bias(0, bs);
        head.set_weight(head.reg_channel(0, 3), 0, 0, 0, wl);
        head.set_bias(head.reg_channel(0, 3), bl);
        head.set_weight(head.reg_channel(0, 2), 0, 0, 0, wz);
        head.set_bias(head.reg_channel(0, 2), bz);
        let prior = AnchorPrior { length: 4.0, width: 1.0, height: 1.5, yaw: 0.0 };
        let anchors = AnchorConfig { priors: vec![prior], z_center: 2.0, resolution: 0.4 };
        let cfg = AttackConfig { tau: 0.6, ..AttackConfig::default() };

        let others = vec![Tensor3::from_vec(1, 1, 1, vec![v]).unwrap()];
        let attacker = Tensor3::from_vec(1, 1, 1, vec![a]).unwrap();
        let delta = Tensor3::from_vec(1, 1, 1, vec![d]).unwrap();
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        let got = surface.evaluate(&delta, &CpFreezerLoss { cfg }, true).unwrap().grad.unwrap().as_slice()[0];

        let x = a + d;
        let w1 = 1.0 / (1.0 + exp(v * v - v * x));
        let f = (1.0 - w1) * v + w1 * x;
        let df_dx = w1 + (x - v) * w1 * (1.0 - w1) * v;
        let s = sigmoid(ws * f + bs);
        assert!(s < cfg.tau);
        let d_conf = -cfg.lambda1 * s * (1.0 - s) * ws;
        let l = prior.length * exp(wl * f + bl);
        let beta = cfg.surrogate_beta;
        let tl = sigmoid(beta * (l - cfg.l_max));
        let tw = sigmoid(beta * (prior.width - cfg.w_max));
        assert!(tl > tw);
        let d_shape = cfg.lambda2 * beta * tl * (1.0 - tl) * l * wl;
        let z = anchors.z_center + prior.height * (wz * f + bz);
        let lo = sigmoid(beta * (cfg.z_min - z));
        let hi = sigmoid(beta * (z - cfg.z_max));
        let d_vert = if lo >= hi {
            -cfg.lambda2 * beta * lo * (1.0 - lo) * prior.height * wz
        } else {
            cfg.lambda2 * beta * hi * (1.0 - hi) * prior.height * wz
        };
        let expected = (d_conf + d_shape + d_vert) * df_dx;
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }

    fn check_fd(obj_for: impl Fn(&AttackSurface) -> alloc::boxed::Box<dyn Objective>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (4, 6, 6);
        let others = vec![random_tensor(&mut rng, c, h, w, 1.0), random_tensor(&mut rng, c, h, w, 1.0)];
        let attacker = random_tensor(&mut rng, c, h, w, 1.0);
        let head = random_head(&mut rng, c, 2, 3);
        let anchors = AnchorConfig::car_default(0.4);
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        let delta = random_tensor(&mut rng, c, h, w, 0.5);
        let obj = obj_for(&surface);
        let grad = surface.evaluate(&delta, obj.as_ref(), true).unwrap().grad.unwrap();
        for _ in 0..40 {
            let idx = rng.random_range(0..delta.as_slice().len());
            let fd = central_difference(&surface, &delta, obj.as_ref(), idx, 1e-6);
            let an = grad.as_slice()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
            assert!(rel <= 1e-4, "seed {seed} idx {idx}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn finite_differences_cp_freezer() {
        for seed in 0..4 {
            check_fd(|_| alloc::boxed::Box::new(CpFreezerLoss { cfg: AttackConfig { l_max: 4.0, ..AttackConfig::default() } }), seed);
        }
    }

    #[test]
    fn finite_differences_baselines() {
        for seed in 10..13 {
            check_fd(
                |s| {
                    let benign = s.forward(&Tensor3::zeros(4, 6, 6)).unwrap().scores;
                    alloc::boxed::Box::new(PgdLoss { benign_scores: benign })
                },
                seed,
            );
            check_fd(|_| alloc::boxed::Box::new(PriorArtLoss { select_threshold: 0.4 }), seed);
        }
    }

    #[test]
    fn grad_wrt_delta_matches_surface() {
        use crate::pose::PoseSE2;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let victim = FeatureMap::new(0, 0, PoseSE2::identity(), 0.4, random_tensor(&mut rng, 3, 4, 4, 1.0));
        let attacker = FeatureMap::new(1, 0, PoseSE2::identity(), 0.4, random_tensor(&mut rng, 3, 4, 4, 1.0));
        let head = random_head(&mut rng, 3, 2, 1);
        let anchors = AnchorConfig::car_default(0.4);
        let delta = Tensor3::zeros(3, 4, 4);
        let cfg = AttackConfig::default();
        let g = grad_wrt_delta(std::slice::from_ref(&victim), &attacker, &delta, &head, &anchors, &cfg).unwrap();
        let others = vec![victim.data.clone()];
        let s = AttackSurface::new(&others, &attacker.data, &head, &anchors);
        let h = s.evaluate(&delta, &CpFreezerLoss { cfg }, true).unwrap().grad.unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut bad = Tensor3::zeros(1, 2, 2);
        bad.as_mut_slice()[0] = f64::NAN;
        let victim = FeatureMap::new(0, 0, crate::pose::PoseSE2::identity(), 0.4, bad);
        let attacker = FeatureMap::zeros(1, 0, crate::pose::PoseSE2::identity(), 0.4, (1, 2, 2));
        let head = HeadWeights::zeros(1, 2, 1).unwrap();
        let r = grad_wrt_delta(&[victim], &attacker, &Tensor3::zeros(1, 2, 2), &head, &AnchorConfig::car_default(0.4), &AttackConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn overflowing_head_reports_its_stage() {
        let others = vec![Tensor3::from_vec(1, 1, 1, vec![1.0]).unwrap()];
        let attacker = Tensor3::from_vec(1, 1, 1, vec![1.0]).unwrap();
        let mut head = HeadWeights::zeros(1, 2, 1).unwrap();
        // log-length delta large enough to overflow exp
        let ch = head.reg_channel(0, 3);
        head.set_weight(ch, 0, 0, 0, 1e3);
        let anchors = AnchorConfig::car_default(0.4);
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        let err = surface
            .evaluate(&Tensor3::zeros(1, 1, 1), &CpFreezerLoss { cfg: AttackConfig::default() }, true)
            .unwrap_err();
        assert!(matches!(err, Error::Numerical { stage: Stage::Decode }), "{err:?}");
    }
}
