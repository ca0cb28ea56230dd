use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpfreeze_core::anchors::AnchorConfig;
use cpfreeze_core::attack::loss::{loss_shape, loss_vertical, shape_indicator, vertical_indicator};
use cpfreeze_core::fusion::{fuse_backward, fuse_tensors};
use cpfreeze_core::scenario::{encode_in_frame, generate_scenario, ground_truth, synth_head_weights};
use cpfreeze_core::warp::{warp_tensor, warp_to_pose};
use cpfreeze_core::{
    rotated_iou, run_pipeline, AffineTransform2D, NoClock, PoseSE2, PostProcess, ProposalBox, Tensor3,
};

fn any_box() -> impl Strategy<Value = ProposalBox> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.2..6.0f64, 0.2..3.0f64, -3.2..3.2f64)
        .prop_map(|(x, y, l, w, yaw)| ProposalBox::bev(x, y, l, w, yaw, 0.5))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let ab = rotated_iou(&a, &b);
        let ba = rotated_iou(&b, &a);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - ba).abs() <= 1e-9);
    }

    #[test]
    fn iou_with_itself_is_one(a in any_box()) {
        prop_assert!((rotated_iou(&a, &a) - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn fusion_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (c, h, w) = (3, 4, 5);
    let inputs: Vec<Tensor3> = (0..3).map(|_| Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-1.5..1.5))).collect();
    let probe = Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0));
    let objective = |ts: &[Tensor3]| {
        let refs: Vec<&Tensor3> = ts.iter().collect();
        let (fused, _) = fuse_tensors(&refs, 0).unwrap();
        fused.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum::<f64>()
    };
    let refs: Vec<&Tensor3> = inputs.iter().collect();
    let (_, cache) = fuse_tensors(&refs, 0).unwrap();
    let grads = fuse_backward(&refs, 0, &cache, &probe);
    let step = 1e-4;
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].as_slice().len() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[k].as_mut_slice()[idx] += step;
            minus[k].as_mut_slice()[idx] -= step;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
            let an = grads[k].as_slice()[idx];
            assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1.0), "agent {k} index {idx}: {fd} vs {an}");
        }
    }
}

#[test]
fn translation_warp_never_creates_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let t = Tensor3::from_fn(2, 18, 18, |_, _, _| rng.random_range(-1.0..1.0));
        let shift = AffineTransform2D::translation_px(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
        let out = warp_tensor(&t, &shift).unwrap();
        assert!(out.abs_sum() <= t.abs_sum() + 1e-9);
    }
}

#[test]
fn pipeline_is_deterministic_and_benign_output_is_sparse() {
    let scenario = generate_scenario(42, 2, 3, 100).unwrap();
    let anchors = AnchorConfig::car_default(scenario.grid.resolution);
    let head = synth_head_weights(&anchors, &scenario.grid).unwrap();
    let post = PostProcess::default();
    let victim = scenario.victim().id;
    let mut hits = 0;
    for frame in 0..scenario.n_frames {
        let pose = scenario.pose(victim, frame).unwrap();
        let maps: Vec<_> = [victim, scenario.attacker().id]
            .iter()
            .map(|&id| encode_in_frame(&scenario, frame, id, &pose).unwrap())
            .collect();
        let a = run_pipeline(&maps, &head, &anchors, &post, &NoClock).unwrap();
        let b = run_pipeline(&maps, &head, &anchors, &post, &NoClock).unwrap();
        assert_eq!(a, b);
        assert!(a.pre_nms_count <= 5 * scenario.objects.len(), "frame {frame}: {} proposals", a.pre_nms_count);
        let gt = ground_truth(&scenario, frame, victim).unwrap();
        hits += gt.iter().filter(|g| a.detections.iter().any(|d| rotated_iou(d, g) >= 0.5)).count();
    }
    assert!(hits > 0, "the benign detector never finds an object");
}

#[test]
fn rendering_in_a_shifted_frame_equals_warping() {
    let scenario = generate_scenario(7, 2, 4, 3).unwrap();
    let res = scenario.grid.resolution;
    let id = scenario.attacker().id;
    let base = PoseSE2::new(scenario.pose(id, 1).unwrap().x, scenario.pose(id, 1).unwrap().y, 0.0);
    let own = encode_in_frame(&scenario, 1, id, &base).unwrap();
    let (dr, dc) = (3i64, -5i64);
    let target = PoseSE2::new(base.x + dc as f64 * res, base.y + dr as f64 * res, 0.0);
    let rendered = encode_in_frame(&scenario, 1, id, &target).unwrap();
    let warped = warp_to_pose(&own, &target).unwrap();
    assert_eq!(warped.pose, target);
    let (c, h, w) = rendered.shape();
    let mut compared = 0;
    for ch in 0..c {
        for r in 0..h as i64 {
            for x in 0..w as i64 {
                let (sr, sx) = (r + dr, x + dc);
                if sr < 0 || sx < 0 || sr >= h as i64 || sx >= w as i64 {
                    continue;
                }
                let (a, b) = (rendered.data.get(ch, r as usize, x as usize), warped.data.get(ch, r as usize, x as usize));
                assert!((a - b).abs() <= 1e-9, "channel {ch} cell ({r}, {x}): {a} vs {b}");
                compared += 1;
            }
        }
    }
    assert!(compared > 0);
}

#[test]
fn sharp_surrogates_track_the_indicators() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (l_max, w_max, z_min, z_max) = (6.0, 3.0, -2.0, 3.0);
    let away = |rng: &mut ChaCha8Rng, bound: f64| {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        bound + side * rng.random_range(0.1..2.0)
    };
    let boxes: Vec<ProposalBox> = (0..200)
        .map(|_| {
            let mut b = ProposalBox::bev(0.0, 0.0, away(&mut rng, l_max), away(&mut rng, w_max).max(0.1), 0.0, 0.5);
            b.z = if rng.random_bool(0.5) { away(&mut rng, z_min) } else { away(&mut rng, z_max) };
            b.height = 1.5;
            b
        })
        .collect();
    let beta = 100.0;
    let ds = (loss_shape(&boxes, l_max, w_max, beta) - shape_indicator(&boxes, l_max, w_max)).abs();
    let dv = (loss_vertical(&boxes, z_min, z_max, beta) - vertical_indicator(&boxes, z_min, z_max)).abs();
    assert!(ds <= 1e-3 && dv <= 1e-3, "surrogate gaps {ds} and {dv}");
}
