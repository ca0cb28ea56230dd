//! Seeded synthetic scenes, a Gaussian-bump BEV encoder and a constructed
//! detection head that reads it.
//!
//! Channel layout of every encoded map:
//!
//! | channel | content |
//! |---|---|
//! | 0 | object heat `g` (anisotropic Gaussian, unit peak) |
//! | 1 | `cos 2θ · g`, θ the object yaw in the map frame |
//! | 2 | `sin 2θ · g` |
//! | 3 | `ln(l / 3.9) / k · g` |
//! | 4 | `ln(w / 1.6) / k · g` |
//! | 5 | `(z - 2.0) / (1.56 k) · g` |
//! | 6..12 | low-amplitude ground texture, a smooth function of world position |
//!
//! with `k = LOG_SCALE`. The head is 1x1: scores respond to heat, to
//! orientation agreement with each anchor and to the texture channels;
//! regressions undo the encoding so a bump peak decodes to its object.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorConfig, ProposalBox};
use crate::error::{validation, Result};
use crate::feature::{cell_center, FeatureMap};
use crate::head::HeadWeights;
use crate::math::{ceil, exp, floor, ln, sin_cos, sqrt};
use crate::pose::PoseSE2;
use crate::tensor::Tensor3;

pub const CH_HEAT: usize = 0;
pub const CH_ORIENT: usize = 1;
pub const CH_YAW: usize = 2;
pub const CH_LOG_LEN: usize = 3;
pub const CH_LOG_WID: usize = 4;
pub const CH_ELEV: usize = 5;
pub const CH_TEXTURE: usize = 6;
pub const N_TEXTURE: usize = 6;
pub const CHANNELS: usize = CH_TEXTURE + N_TEXTURE;

/// Reference box the size and elevation channels are measured against.
pub const REF_LENGTH: f64 = 3.9;
pub const REF_WIDTH: f64 = 1.6;
pub const REF_HEIGHT: f64 = 1.56;
pub const REF_Z: f64 = 2.0;
/// Compression of the log-size and elevation channels.
pub const LOG_SCALE: f64 = 8.0;

/// Gaussian spread as a fraction of object length / width.
const SIGMA_LENGTH_FRACTION: f64 = 1.0 / 7.0;
const SIGMA_WIDTH_FRACTION: f64 = 1.0 / 3.5;
/// Bumps are truncated beyond this many sigmas.
const BUMP_CUTOFF_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    /// Meters per cell.
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { channels: CHANNELS, rows: 64, cols: 64, resolution: 0.4 }
    }
}

impl GridSpec {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    /// Half extents of the grid in meters along x and y.
    pub fn half_extent(&self) -> (f64, f64) {
        ((self.cols / 2) as f64 * self.resolution, (self.rows / 2) as f64 * self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != CHANNELS {
            return Err(validation("the synthetic encoder writes exactly 12 channels"));
        }
        if self.rows < 8 || self.cols < 8 {
            return Err(validation("grid must be at least 8x8"));
        }
        if !(self.resolution > 0.0) {
            return Err(validation("grid resolution must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Victim,
    Attacker,
    Benign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u32,
    pub role: Role,
    /// One pose per frame.
    pub poses: Vec<PoseSE2>,
}

/// An object moving on a straight line at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub id: u32,
    pub x0: f64,
    pub y0: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

impl ObjectTrack {
    /// World-frame box at `frame`.
    pub fn state(&self, frame: usize, dt: f64) -> ProposalBox {
        let t = frame as f64 * dt;
        ProposalBox {
            x: self.x0 + self.vx * t,
            y: self.y0 + self.vy * t,
            z: self.z,
            length: self.length,
            width: self.width,
            height: self.height,
            yaw: self.yaw,
            score: 1.0,
            source: Default::default(),
        }
    }
}

/// One plane wave of the ground texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureWave {
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub n_frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    pub grid: GridSpec,
    /// Objects farther than this from an observer are not encoded.
    pub range_radius: f64,
    pub agents: Vec<AgentTrack>,
    pub objects: Vec<ObjectTrack>,
    /// `texture[c]` holds the waves of texture channel `c`.
    pub texture: Vec<Vec<TextureWave>>,
}

impl Scenario {
    pub fn agent(&self, id: u32) -> Result<&AgentTrack> {
        self.agents.iter().find(|a| a.id == id).ok_or_else(|| validation("unknown agent id"))
    }

    pub fn victim(&self) -> &AgentTrack {
        self.agents.iter().find(|a| a.role == Role::Victim).expect("scenario has a victim")
    }

    pub fn attacker(&self) -> &AgentTrack {
        self.agents.iter().find(|a| a.role == Role::Attacker).expect("scenario has an attacker")
    }

    pub fn pose(&self, agent_id: u32, frame: usize) -> Result<PoseSE2> {
        if frame >= self.n_frames {
            return Err(validation("frame index out of range"));
        }
        Ok(self.agent(agent_id)?.poses[frame])
    }

    /// Ground-texture value of channel `c` (0-based within the texture block).
    pub fn texture_at(&self, c: usize, wx: f64, wy: f64) -> f64 {
        self.texture[c].iter().map(|w| w.amplitude * sin_cos(w.kx * wx + w.ky * wy + w.phase).0).sum()
    }
}

/// Knobs of the scene generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub grid: GridSpec,
    pub dt: f64,
    pub range_radius: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Standard deviation of each texture channel.
    pub texture_std: f64,
    pub lane_width: f64,
    pub min_object_gap: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            dt: 0.1,
            range_radius: 40.0,
            min_speed: 4.0,
            max_speed: 7.0,
            texture_std: 0.03,
            lane_width: 3.5,
            min_object_gap: 5.0,
        }
    }
}

/// Scene with default parameters. Agent 0 is the victim, agent 1 the attacker.
pub fn generate_scenario(seed: u64, n_agents: usize, n_objects: usize, n_frames: usize) -> Result<Scenario> {
    generate_with(seed, n_agents, n_objects, n_frames, &ScenarioParams::default())
}

const PLACEMENT_ATTEMPTS: usize = 5000;
/// Objects keep this margin (meters) from the victim grid border.
const VIEW_MARGIN: f64 = 2.5;
const AGENT_CLEARANCE: f64 = 4.5;

pub fn generate_with(
    seed: u64,
    n_agents: usize,
    n_objects: usize,
    n_frames: usize,
    params: &ScenarioParams,
) -> Result<Scenario> {
    if n_agents < 2 {
        return Err(validation("a scenario needs at least two agents (victim and attacker)"));
    }
    if n_frames < 1 {
        return Err(validation("a scenario needs at least one frame"));
    }
    params.grid.validate()?;
    if !(params.dt > 0.0 && params.min_speed >= 0.0 && params.max_speed >= params.min_speed) {
        return Err(validation("invalid motion parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = params.dt;
    let lane = params.lane_width;
    let duration = (n_frames - 1) as f64 * dt;
    let (hx, hy) = params.grid.half_extent();

    // Everyone drives along +x; the victim starts at the origin.
    let v_speed = rng.random_range(params.min_speed..=params.max_speed);
    let straight = |x0: f64, y0: f64, speed: f64| -> Vec<PoseSE2> {
        (0..n_frames).map(|f| PoseSE2::new(x0 + speed * f as f64 * dt, y0, 0.0)).collect()
    };
    let mut agents = alloc::vec![AgentTrack { id: 0, role: Role::Victim, poses: straight(0.0, 0.0, v_speed) }];
    for id in 1..n_agents {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let y0 = if rng.random_bool(0.5) { lane } else { -lane };
            let x0 = rng.random_range(-8.0..8.0);
            let speed = v_speed + rng.random_range(-0.5..0.5);
            let poses = straight(x0, y0, speed);
            let clear = agents.iter().all(|a| {
                a.poses.iter().zip(&poses).all(|(p, q)| sqrt((p.x - q.x).powi(2) + (p.y - q.y).powi(2)) >= AGENT_CLEARANCE)
            });
            if clear {
                placed = Some(poses);
                break;
            }
        }
        let poses = placed.ok_or_else(|| validation("could not place all agents"))?;
        let role = if id == 1 { Role::Attacker } else { Role::Benign };
        agents.push(AgentTrack { id: id as u32, role, poses });
    }

    let victim_poses = agents[0].poses.clone();
    let in_view = |o: &ObjectTrack| {
        (0..n_frames).all(|f| {
            let s = o.state(f, dt);
            let (lx, ly) = victim_poses[f].world_to_local(s.x, s.y);
            lx.abs() <= hx - VIEW_MARGIN && ly.abs() <= hy - VIEW_MARGIN
        })
    };
    let mut objects: Vec<ObjectTrack> = Vec::with_capacity(n_objects);
    for id in 0..n_objects {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let length = rng.random_range(3.6..4.8);
            let width = rng.random_range(1.6..2.1);
            let height = rng.random_range(1.5..1.8);
            let z = REF_Z + rng.random_range(-0.15..0.15);
            let parked = rng.random_bool(0.4);
            let o = if parked {
                // parked across a roadside slot the victim drives past
                let side = 2.0 * lane + 1.5;
                let y0 = if rng.random_bool(0.5) { side } else { -side };
                let lo = v_speed * duration - (hx - VIEW_MARGIN);
                let hi = hx - VIEW_MARGIN;
                if lo >= hi {
                    continue;
                }
                ObjectTrack {
                    id: id as u32,
                    x0: rng.random_range(lo..hi),
                    y0: y0 + rng.random_range(-0.3..0.3),
                    z,
                    length,
                    width,
                    height,
                    yaw: FRAC_PI_2 + rng.random_range(-0.08..0.08),
                    vx: 0.0,
                    vy: 0.0,
                }
            } else {
                let y0 = lane * rng.random_range(-2i32..=2) as f64;
                let yaw: f64 = rng.random_range(-0.08..0.08);
                let speed = v_speed + rng.random_range(-1.0..1.0);
                let (s, c) = sin_cos(yaw);
                ObjectTrack {
                    id: id as u32,
                    x0: rng.random_range(-(hx - VIEW_MARGIN)..(hx - VIEW_MARGIN)),
                    y0: y0 + rng.random_range(-0.3..0.3),
                    z,
                    length,
                    width,
                    height,
                    yaw,
                    vx: speed * c,
                    vy: speed * s,
                }
            };
            if !in_view(&o) {
                continue;
            }
            let apart = (0..n_frames).all(|f| {
                let s = o.state(f, dt);
                let far_from_objects = objects.iter().all(|p| {
                    let q = p.state(f, dt);
                    sqrt((q.x - s.x).powi(2) + (q.y - s.y).powi(2)) >= params.min_object_gap
                });
                let far_from_agents = agents.iter().all(|a| {
                    let p = a.poses[f];
                    sqrt((p.x - s.x).powi(2) + (p.y - s.y).powi(2)) >= AGENT_CLEARANCE
                });
                far_from_objects && far_from_agents
            });
            if apart {
                placed = Some(o);
                break;
            }
        }
        objects.push(placed.ok_or_else(|| validation("could not place all objects apart and in view"))?);
    }

    // Three waves per channel with wavelengths of 3 to 9 m.
    let per_wave = params.texture_std / sqrt(1.5);
    let texture = (0..N_TEXTURE)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let k = 2.0 * PI / rng.random_range(3.0..9.0);
                    let dir: f64 = rng.random_range(0.0..2.0 * PI);
                    let (s, c) = sin_cos(dir);
                    TextureWave { kx: k * c, ky: k * s, phase: rng.random_range(0.0..2.0 * PI), amplitude: per_wave }
                })
                .collect()
        })
        .collect();

    Ok(Scenario {
        seed,
        n_frames,
        dt,
        grid: params.grid,
        range_radius: params.range_radius,
        agents,
        objects,
        texture,
    })
}

/// What `agent_id` senses at `frame`, in its own frame.
pub fn encode_bev_features(scenario: &Scenario, frame: usize, agent_id: u32) -> Result<FeatureMap> {
    let pose = scenario.pose(agent_id, frame)?;
    encode_in_frame(scenario, frame, agent_id, &pose)
}

/// What `observer` senses at `frame`, rendered directly on the grid of
/// `target` (ideal spatial alignment). The map is labeled with the
/// observer's id, the target pose and the frame index.
pub fn encode_in_frame(scenario: &Scenario, frame: usize, observer: u32, target: &PoseSE2) -> Result<FeatureMap> {
    let obs = scenario.pose(observer, frame)?;
    let grid = &scenario.grid;
    grid.validate()?;
    let (rows, cols, res) = (grid.rows, grid.cols, grid.resolution);
    let mut data = Tensor3::zeros(CHANNELS, rows, cols);
    let r2 = scenario.range_radius * scenario.range_radius;
    let visible = |wx: f64, wy: f64| (wx - obs.x).powi(2) + (wy - obs.y).powi(2) <= r2;

    for row in 0..rows {
        for col in 0..cols {
            let (lx, ly) = cell_center(rows, cols, res, row, col);
            let (wx, wy) = target.local_to_world(lx, ly);
            if !visible(wx, wy) {
                continue;
            }
            for c in 0..N_TEXTURE {
                data.set(CH_TEXTURE + c, row, col, scenario.texture_at(c, wx, wy));
            }
        }
    }

    for o in &scenario.objects {
        let s = o.state(frame, scenario.dt);
        if !visible(s.x, s.y) {
            continue;
        }
        let (cx, cy) = target.world_to_local(s.x, s.y);
        let theta = s.yaw - target.yaw;
        splat(&mut data, res, &s, cx, cy, theta);
    }
    Ok(FeatureMap::new(observer, frame as u32, *target, res, data))
}

fn splat(data: &mut Tensor3, res: f64, b: &ProposalBox, cx: f64, cy: f64, theta: f64) {
    let (_, rows, cols) = data.shape();
    let sl = b.length * SIGMA_LENGTH_FRACTION;
    let sw = b.width * SIGMA_WIDTH_FRACTION;
    let reach = BUMP_CUTOFF_SIGMAS * sl.max(sw);
    let (s, c) = sin_cos(theta);
    let (s2, c2) = sin_cos(2.0 * theta);
    let log_len = ln(b.length / REF_LENGTH) / LOG_SCALE;
    let log_wid = ln(b.width / REF_WIDTH) / LOG_SCALE;
    let elev = (b.z - REF_Z) / (REF_HEIGHT * LOG_SCALE);
    let to_index = |v: f64, n: usize| v / res + (n / 2) as f64;
    let r0 = floor(to_index(cy - reach, rows)).max(0.0) as usize;
    let r1 = (ceil(to_index(cy + reach, rows)).max(-1.0) + 1.0).min(rows as f64) as usize;
    let x0 = floor(to_index(cx - reach, cols)).max(0.0) as usize;
    let x1 = (ceil(to_index(cx + reach, cols)).max(-1.0) + 1.0).min(cols as f64) as usize;
    for row in r0..r1 {
        for col in x0..x1 {
            let (px, py) = cell_center(rows, cols, res, row, col);
            let (dx, dy) = (px - cx, py - cy);
            let u = c * dx + s * dy;
            let v = -s * dx + c * dy;
            let g = exp(-0.5 * ((u / sl).powi(2) + (v / sw).powi(2)));
            if g < 1e-9 {
                continue;
            }
            let add = |data: &mut Tensor3, ch: usize, val: f64| {
                let i = data.index(ch, row, col);
                data.as_mut_slice()[i] += val;
            };
            add(data, CH_HEAT, g);
            add(data, CH_ORIENT, c2 * g);
            add(data, CH_YAW, s2 * g);
            add(data, CH_LOG_LEN, log_len * g);
            add(data, CH_LOG_WID, log_wid * g);
            add(data, CH_ELEV, elev * g);
        }
    }
}

/// Object boxes at `frame` in the frame of `pose`, within `range` of it.
pub fn ground_truth_in(scenario: &Scenario, frame: usize, pose: &PoseSE2) -> Vec<ProposalBox> {
    scenario
        .objects
        .iter()
        .map(|o| o.state(frame, scenario.dt))
        .filter(|s| (s.x - pose.x).powi(2) + (s.y - pose.y).powi(2) <= scenario.range_radius.powi(2))
        .map(|s| {
            let (x, y) = pose.world_to_local(s.x, s.y);
            ProposalBox { x, y, yaw: crate::math::wrap_angle(s.yaw - pose.yaw), ..s }
        })
        .collect()
}

pub fn ground_truth(scenario: &Scenario, frame: usize, agent_id: u32) -> Result<Vec<ProposalBox>> {
    let pose = scenario.pose(agent_id, frame)?;
    Ok(ground_truth_in(scenario, frame, &pose))
}

/// Gains of the constructed head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadDesign {
    /// Score gain on object heat, shared by all anchors.
    pub heat_gain: f64,
    /// Score gain on orientation agreement with the anchor.
    pub orient_gain: f64,
    /// Heat level (with full orientation agreement) at which a score is 0.5.
    pub detect_level: f64,
    /// Weight of texture channels 0..3, same sign for every anchor.
    pub texture_shared: f64,
    /// Weight of texture channels 3..6, sign alternating per anchor.
    pub texture_contrast: f64,
}

impl Default for HeadDesign {
    fn default() -> Self {
        Self { heat_gain: 7.0, orient_gain: 5.7, detect_level: 0.8976, texture_shared: 8.3, texture_contrast: 4.767 }
    }
}

/// The constructed 1x1 head for the default gains.
pub fn synth_head_weights(anchors: &AnchorConfig, grid: &GridSpec) -> Result<HeadWeights> {
    synth_head_with(anchors, grid, &HeadDesign::default())
}

pub fn synth_head_with(anchors: &AnchorConfig, grid: &GridSpec, design: &HeadDesign) -> Result<HeadWeights> {
    anchors.validate()?;
    grid.validate()?;
    let mut head = HeadWeights::zeros(CHANNELS, anchors.count(), 1)?;
    let bias = -(design.heat_gain + design.orient_gain) * design.detect_level;
    for (a, prior) in anchors.priors.iter().enumerate() {
        let (s2, c2) = sin_cos(2.0 * prior.yaw);
        let sc = head.score_channel(a);
        head.set_bias(sc, bias);
        head.set_weight(sc, CH_HEAT, 0, 0, design.heat_gain);
        // orient_gain * cos 2(theta - yaw_a) * heat
        head.set_weight(sc, CH_ORIENT, 0, 0, design.orient_gain * c2);
        head.set_weight(sc, CH_YAW, 0, 0, design.orient_gain * s2);
        let contrast = if a % 2 == 0 { design.texture_contrast } else { -design.texture_contrast };
        for t in 0..N_TEXTURE {
            let w = if t < N_TEXTURE / 2 {
                design.texture_shared
            } else if t % 2 == 0 {
                contrast
            } else {
                -contrast
            };
            head.set_weight(sc, CH_TEXTURE + t, 0, 0, w);
        }

        let reg = |p| head.reg_channel(a, p);
        let (ch_z, ch_l, ch_w, ch_yaw) = (reg(2), reg(3), reg(4), reg(6));
        head.set_weight(ch_z, CH_ELEV, 0, 0, LOG_SCALE * REF_HEIGHT / prior.height);
        head.set_weight(ch_z, CH_HEAT, 0, 0, (REF_Z - anchors.z_center) / prior.height);
        head.set_weight(ch_l, CH_LOG_LEN, 0, 0, LOG_SCALE);
        head.set_weight(ch_l, CH_HEAT, 0, 0, ln(REF_LENGTH / prior.length));
        head.set_weight(ch_w, CH_LOG_WID, 0, 0, LOG_SCALE);
        head.set_weight(ch_w, CH_HEAT, 0, 0, ln(REF_WIDTH / prior.width));
        // yaw offset 0.5 * sin 2(theta - yaw_a) * heat
        head.set_weight(ch_yaw, CH_YAW, 0, 0, 0.5 * c2);
        head.set_weight(ch_yaw, CH_ORIENT, 0, 0, -0.5 * s2);
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::apply_inference_head;
    use crate::pipeline::{run_pipeline, NoClock, PostProcess};

    fn quiet(s: &mut Scenario) {
        for ch in s.texture.iter_mut() {
            ch.clear();
        }
    }

    #[test]
    fn needs_two_agents() {
        assert!(matches!(generate_scenario(1, 1, 3, 5), Err(crate::Error::Validation(_))));
    }

    #[test]
    fn deterministic_by_seed() {
        assert_eq!(generate_scenario(42, 2, 3, 20).unwrap(), generate_scenario(42, 2, 3, 20).unwrap());
        assert_ne!(generate_scenario(42, 2, 3, 20).unwrap(), generate_scenario(43, 2, 3, 20).unwrap());
    }

    #[test]
    fn roles_and_dims() {
        let s = generate_scenario(7, 3, 4, 20).unwrap();
        assert_eq!(s.agents.iter().filter(|a| a.role == Role::Attacker).count(), 1);
        assert_eq!(s.victim().id, 0);
        assert_eq!(s.attacker().id, 1);
        for o in &s.objects {
            for d in [o.length, o.width, o.height] {
                assert!((1.5..=6.0).contains(&d));
            }
        }
        assert!(generate_scenario(7, 2, 0, 20).unwrap().objects.is_empty());
    }

    #[test]
    fn no_objects_no_texture_is_zero() {
        let mut s = generate_scenario(3, 2, 0, 4).unwrap();
        quiet(&mut s);
        let f = encode_bev_features(&s, 0, 0).unwrap();
        assert!(f.data.as_slice().iter().all(|&v| v == 0.0));
        assert!(encode_bev_features(&s, 0, 9).is_err());
        assert!(encode_bev_features(&s, 4, 0).is_err());
    }

    fn single_object_scene(x: f64, y: f64, yaw: f64) -> Scenario {
        let mut s = generate_scenario(5, 2, 0, 1).unwrap();
        quiet(&mut s);
        s.agents[0].poses[0] = PoseSE2::identity();
        s.objects.push(ObjectTrack {
            id: 0,
            x0: x,
            y0: y,
            z: REF_Z,
            length: 4.2,
            width: 1.8,
            height: 1.5,
            yaw,
            vx: 0.0,
            vy: 0.0,
        });
        s
    }

    #[test]
    fn centered_object_peaks_at_grid_center() {
        let s = single_object_scene(0.0, 0.0, 0.0);
        let f = encode_bev_features(&s, 0, 0).unwrap();
        let heat = f.data.plane(CH_HEAT);
        let (best, peak) = heat.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!(best, 32 * 64 + 32);
        assert!((peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_feature_scores_are_low() {
        let grid = GridSpec::default();
        let anchors = AnchorConfig::car_default(grid.resolution);
        let head = synth_head_weights(&anchors, &grid).unwrap();
        let zero = FeatureMap::zeros(0, 0, PoseSE2::identity(), 0.4, grid.shape());
        let raw = apply_inference_head(&zero, &head).unwrap();
        assert!(raw.scores.iter().all(|&s| s < 0.05));
    }

    #[test]
    fn centered_bump_gives_one_confident_cell() {
        let grid = GridSpec::default();
        let anchors = AnchorConfig::car_default(grid.resolution);
        let head = synth_head_weights(&anchors, &grid).unwrap();
        for yaw in [0.0, FRAC_PI_2] {
            let s = single_object_scene(0.0, 0.0, yaw);
            let f = encode_bev_features(&s, 0, 0).unwrap();
            let raw = apply_inference_head(&f, &head).unwrap();
            assert_eq!(raw.scores.iter().filter(|&&v| v > 0.5).count(), 1);
            let boxes = crate::anchors::decode_proposals(&raw, &anchors).unwrap();
            let best = boxes.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
            assert!((best.length - 4.2).abs() < 1e-9 && (best.width - 1.8).abs() < 1e-9);
            assert!((best.z - REF_Z).abs() < 1e-9);
            assert!(crate::math::wrap_angle(2.0 * (best.yaw - yaw)).abs() < 1e-9);
        }
    }

    #[test]
    fn benign_scene_detects_each_object() {
        let s = generate_scenario(42, 2, 3, 20).unwrap();
        let anchors = AnchorConfig::car_default(s.grid.resolution);
        let head = synth_head_weights(&anchors, &s.grid).unwrap();
        for frame in 0..s.n_frames {
            let pose = s.pose(0, frame).unwrap();
            let feats = [encode_bev_features(&s, frame, 0).unwrap(), encode_in_frame(&s, frame, 1, &pose).unwrap()];
            let out = run_pipeline(&feats, &head, &anchors, &PostProcess::default(), &NoClock).unwrap();
            let gt = ground_truth(&s, frame, 0).unwrap();
            assert_eq!(out.detections.len(), 3, "frame {frame}");
            for g in &gt {
                let best = out.detections.iter().map(|d| crate::rotated_iou(d, g)).fold(0.0, f64::max);
                assert!(best >= 0.3, "frame {frame}: best IoU {best}");
            }
            for d in &out.detections {
                let g = gt.iter().max_by(|a, b| crate::rotated_iou(d, a).total_cmp(&crate::rotated_iou(d, b))).unwrap();
                assert!((d.length / g.length - 1.0).abs() <= 0.2 && (d.width / g.width - 1.0).abs() <= 0.2);
            }
        }
    }
}
