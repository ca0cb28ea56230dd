use cpfreeze::container::{
    read_feature_map, read_perturbation, read_proposals, write_feature_map, write_perturbation, write_proposals,
    ContainerError,
};
use cpfreeze::defense::{robosac_consensus, sweep_postprocess, RobosacConfig, SweepGrid};
use cpfreeze::experiment::{frame_inputs, frame_inputs_with_noise, Detector, PoseNoise};
use cpfreeze_core::attack::{AttackConfig, AttackKind};
use cpfreeze_core::scenario::generate_scenario;
use cpfreeze_core::{FeatureMap, NoClock, PoseSE2, PostProcess, ProposalBox, Tensor3};

fn small() -> (cpfreeze_core::scenario::Scenario, Detector) {
    let s = generate_scenario(42, 3, 3, 4).unwrap();
    let d = Detector::for_scenario(&s, PostProcess::default()).unwrap();
    (s, d)
}

#[test]
fn feature_map_round_trips_at_f32_precision() {
    let data = Tensor3::from_fn(3, 5, 7, |c, r, x| (c as f64 - 1.3) * 0.25 + r as f64 * 1e-3 - x as f64);
    let f = FeatureMap::new(4, 17, PoseSE2::new(1.25, -3.0, 0.7), 0.4, data);
    let mut buf = Vec::new();
    write_feature_map(&mut buf, &f).unwrap();
    let back = read_feature_map(&mut buf.as_slice()).unwrap();
    assert_eq!((back.agent_id, back.timestamp, back.pose, back.resolution), (4, 17, f.pose, 0.4));
    for (a, b) in back.data.as_slice().iter().zip(f.data.as_slice()) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn proposals_and_perturbations_round_trip() {
    let boxes = vec![
        ProposalBox::bev(1.5, -2.0, 3.875, 1.625, 0.25, 0.875).with_source(1, 20, 31),
        ProposalBox::bev(0.0, 0.0, 4.5, 2.0, -1.0, 0.5),
    ];
    let mut buf = Vec::new();
    write_proposals(&mut buf, &boxes).unwrap();
    assert_eq!(read_proposals(&mut buf.as_slice()).unwrap(), boxes);

    let delta = Tensor3::from_fn(2, 3, 3, |c, r, x| (c + r + x) as f64 * 0.125);
    buf.clear();
    write_perturbation(&mut buf, &delta).unwrap();
    assert_eq!(read_perturbation(&mut buf.as_slice()).unwrap(), delta);
    buf[4] = 9;
    assert!(matches!(read_perturbation(&mut buf.as_slice()), Err(ContainerError::Version(9))));
}

#[test]
fn robosac_accepts_a_benign_collaborator() {
    let (s, d) = small();
    let inputs = frame_inputs(&s, 1, true).unwrap();
    let cfg = RobosacConfig { iterations: 4, ..RobosacConfig::default() };
    let out = robosac_consensus(&inputs.current, &d, &cfg, &NoClock).unwrap();
    assert_eq!(out.pipeline_runs, 5);
    assert_eq!(out.jaccards.len(), 4);
    let accepted = out.accepted.expect("benign maps agree with the ego");
    assert_eq!(accepted.len(), 2);
    assert_eq!(accepted[0], inputs.current[0].agent_id);
}

#[test]
fn robosac_rejects_bad_settings() {
    let (s, d) = small();
    let maps = frame_inputs(&s, 1, true).unwrap().current;
    let too_big = RobosacConfig { subset_size: maps.len(), ..RobosacConfig::default() };
    assert!(robosac_consensus(&maps, &d, &too_big, &NoClock).is_err());
    let none = RobosacConfig { iterations: 0, ..RobosacConfig::default() };
    assert!(robosac_consensus(&maps, &d, &none, &NoClock).is_err());
    let ego_only = RobosacConfig { iterations: 1, subset_size: 0, ..RobosacConfig::default() };
    let out = robosac_consensus(&maps, &d, &ego_only, &NoClock).unwrap();
    assert_eq!(out.pipeline_runs, 2);
    assert_eq!(out.jaccards, vec![1.0]);
}

#[test]
fn a_cap_of_one_leaves_nms_nothing_to_compare() {
    let (s, d) = small();
    let cfg = AttackConfig { steps: 2, ..AttackConfig::default() };
    let grid = SweepGrid { score_thresholds: vec![0.2], iou_thresholds: vec![0.15], max_keep: vec![1, 1000] };
    let rep = sweep_postprocess(&s, &d, AttackKind::CpFreezer, &cfg, true, &grid, None).unwrap();
    assert_eq!(rep.points.len(), 2);
    let capped = &rep.points[0];
    assert_eq!(capped.post.max_keep, 1);
    assert!(capped.mean_nms_input_attacked <= 1.0);
    assert_eq!(capped.roi_iou_evaluations, None);
    assert!(rep.points[1].mean_nms_input_attacked > 1.0);
}

#[test]
fn pose_noise_is_off_by_default_and_deterministic_when_on() {
    let (s, _) = small();
    let exact = frame_inputs(&s, 2, true).unwrap();
    let off = frame_inputs_with_noise(&s, 2, true, &PoseNoise::default()).unwrap();
    assert_eq!(exact.predicted_others, off.predicted_others);
    let noise = PoseNoise { xy_std_m: 0.5, yaw_std_rad: 0.02, seed: 9 };
    let a = frame_inputs_with_noise(&s, 2, true, &noise).unwrap();
    let b = frame_inputs_with_noise(&s, 2, true, &noise).unwrap();
    assert_eq!(a.predicted_attacker, b.predicted_attacker);
    assert_ne!(a.predicted_attacker, exact.predicted_attacker);
    assert_eq!(a.current, exact.current);
}
