//! Synthetic scenarios with closed-form futures.
//!
//! Each scenario is laid out in a template-local frame (road along +x) and
//! then placed in the world by an optional random rigid pose. Behaviours
//! depend on context that only some token sources can see: turns exist
//! only where the map has a branch, and a pedestrian cuts diagonally
//! across the road unless a vegetation strip, visible only in the voxel
//! grid, blocks the shortcut.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::motion::{MotionProfile, PathSegment, Stop};
use super::types::{
    AgentState, AgentTrack, AgentType, FutureState, MapElement, MapElementKind, Scenario,
    VoxelGrid,
};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2, Pose2};

pub const FEATURE_CHANNELS: usize = 32;
pub const SEMANTIC_CLASSES: usize = 22;

/// Semantic label ids used by the synthetic segmentation stand-in.
pub mod class {
    pub const UNLABELED: usize = 0;
    pub const ROAD: usize = 1;
    pub const CROSSWALK: usize = 3;
    pub const SIDEWALK: usize = 4;
    pub const CURB: usize = 5;
    pub const VEGETATION: usize = 6;
    pub const TERRAIN: usize = 7;
    pub const BUILDING: usize = 8;
    pub const CAR: usize = 11;
    pub const BICYCLIST: usize = 16;
    pub const PEDESTRIAN: usize = 17;
}

const LANE_OFFSET: f64 = 1.75;
const ROAD_HALF_WIDTH: f64 = 3.5;
const SIDEWALK_OUTER: f64 = 6.5;
const BUILDING_LINE: f64 = 8.0;
const CYCLE_OFFSET: f64 = 0.8;
const MAP_EXTENT: f64 = 40.0;
const TURN_RADIUS: f64 = 3.5;
const SPEED_LIMIT: f64 = 13.9;
const FEATURE_SEED: u64 = 0x5EED_F00D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapTemplate {
    StraightRoad,
    TIntersection,
    Crosswalk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoxelConfig {
    pub cell_size: f64,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        VoxelConfig {
            cell_size: 0.8,
            depth: 2,
            height: 40,
            width: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_scenarios: usize,
    pub history_steps: usize,
    pub future_steps: usize,
    pub dt: f64,
    pub targets_per_scenario: usize,
    pub templates: Vec<MapTemplate>,
    pub voxels: VoxelConfig,
    /// Probability that an agent's earliest history steps are unobserved.
    pub history_dropout: f64,
    pub random_global_pose: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_scenarios: 100,
            history_steps: 11,
            future_steps: 80,
            dt: 0.1,
            targets_per_scenario: 3,
            templates: vec![
                MapTemplate::StraightRoad,
                MapTemplate::TIntersection,
                MapTemplate::Crosswalk,
            ],
            voxels: VoxelConfig::default(),
            history_dropout: 0.3,
            random_global_pose: true,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.num_scenarios > 0, "num_scenarios must be positive"),
            (self.history_steps > 0, "history_steps must be positive"),
            (self.future_steps > 0, "future_steps must be positive"),
            (self.dt > 0.0, "dt must be positive"),
            (self.targets_per_scenario > 0, "targets_per_scenario must be positive"),
            (!self.templates.is_empty(), "templates must not be empty"),
            (self.voxels.cell_size > 0.0, "voxels.cell_size must be positive"),
            (
                self.voxels.depth > 0 && self.voxels.height > 0 && self.voxels.width > 0,
                "voxel grid dimensions must be positive",
            ),
            (
                (0.0..=1.0).contains(&self.history_dropout),
                "history_dropout must lie in [0, 1]",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(msg));
            }
        }
        Ok(())
    }
}

/// Seed of scenario `index` in a run seeded with `seed`.
pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_synthetic(seed: u64, config: &SyntheticConfig) -> Result<Vec<Scenario>> {
    config.validate()?;
    (0..config.num_scenarios)
        .map(|i| generate_scenario(seed, i, config).map(|(s, _)| s))
        .collect()
}

/// Generates one scenario together with the world-frame motion profile of
/// every agent (same order as `Scenario::agents`).
pub fn generate_scenario(
    seed: u64,
    index: usize,
    config: &SyntheticConfig,
) -> Result<(Scenario, Vec<MotionProfile>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(seed, index));
    let template = config.templates[rng.random_range(0..config.templates.len())];
    let layout = Layout::sample(template, &mut rng);
    let world = if config.random_global_pose {
        Pose2::new(
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(-PI..PI),
        )
    } else {
        Pose2::identity()
    };

    let actors = layout.actors(&mut rng);
    let mut agents = Vec::with_capacity(actors.len());
    let mut motions = Vec::with_capacity(actors.len());
    for (i, actor) in actors.iter().enumerate() {
        let motion = MotionProfile {
            start: world.to_world(actor.motion.start),
            heading: world.heading_to_world(actor.motion.heading),
            ..actor.motion.clone()
        };
        let dropped = if config.history_steps > 2 && rng.random_bool(config.history_dropout) {
            rng.random_range(1..config.history_steps - 1)
        } else {
            0
        };
        agents.push(rollout(
            i as u64 + 1,
            actor,
            &motion,
            config,
            dropped,
        ));
        motions.push(motion);
    }

    let map = layout
        .map_elements()
        .into_iter()
        .map(|mut m| {
            for p in &mut m.points {
                *p = world.to_world(*p);
            }
            m
        })
        .collect();
    let voxels = layout.voxels(&config.voxels, &world, &actors);
    let targets = agents
        .iter()
        .take(config.targets_per_scenario)
        .map(|a| a.agent_id)
        .collect();
    let scenario = Scenario {
        scenario_id: format!("syn-{seed:016x}-{index:06}"),
        timestamp_step: config.dt,
        agents,
        map,
        voxels,
        targets,
    };
    Ok((scenario, motions))
}

fn rollout(
    agent_id: u64,
    actor: &Actor,
    motion: &MotionProfile,
    config: &SyntheticConfig,
    dropped: usize,
) -> AgentTrack {
    let th = config.history_steps;
    let mut states = Vec::with_capacity(th);
    let mut valid = Vec::with_capacity(th);
    for i in 0..th {
        if i < dropped {
            states.push(AgentState::default());
            valid.push(false);
            continue;
        }
        let t = (i as f64 - (th - 1) as f64) * config.dt;
        let p = motion.position_at(t);
        let v = motion.velocity_at(t);
        states.push(AgentState {
            x: p[0],
            y: p[1],
            vx: v[0],
            vy: v[1],
            heading: wrap_angle(motion.heading_at(t)),
            length: actor.dims[0],
            width: actor.dims[1],
            height: actor.dims[2],
        });
        valid.push(true);
    }
    let future = (1..=config.future_steps)
        .map(|k| {
            let t = k as f64 * config.dt;
            let p = motion.position_at(t);
            let v = motion.velocity_at(t);
            FutureState {
                x: p[0],
                y: p[1],
                vx: v[0],
                vy: v[1],
            }
        })
        .collect();
    AgentTrack {
        agent_id,
        agent_type: actor.agent_type,
        states,
        valid,
        future: Some(future),
    }
}

struct Actor {
    agent_type: AgentType,
    motion: MotionProfile,
    dims: [f64; 3],
}

#[derive(Clone, Copy)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn contains(&self, p: Point2) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

struct Layout {
    template: MapTemplate,
    crosswalk_x: f64,
    /// Pedestrian start offset before the crosswalk and whether the
    /// shortcut is blocked.
    pedestrian_gap: f64,
    blocked: bool,
    vegetation: Vec<Rect>,
}

fn dims(t: AgentType, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match t {
        AgentType::Vehicle => [
            rng.random_range(4.0..5.0),
            rng.random_range(1.8..2.0),
            rng.random_range(1.4..1.8),
        ],
        AgentType::Pedestrian => [0.6, 0.6, rng.random_range(1.6..1.9)],
        AgentType::Cyclist => [1.8, 0.6, 1.7],
    }
}

fn maybe_stop(speed: f64, probability: f64, rng: &mut ChaCha8Rng) -> Option<Stop> {
    rng.random_bool(probability).then(|| Stop {
        start_time: rng.random_range(0.5..4.0),
        decel: (speed * rng.random_range(0.25..0.6)).max(0.5),
    })
}

fn arc_points(start: Point2, heading: f64, segments: Vec<PathSegment>, spacing: f64) -> (Vec<Point2>, Vec<f64>) {
    let total: f64 = segments.iter().map(|s| s.length).sum();
    let path = MotionProfile {
        start,
        heading,
        speed: 0.0,
        segments: segments.clone(),
        stop: None,
    };
    let n = (total / spacing).ceil().max(1.0) as usize;
    let mut pts = Vec::with_capacity(n + 1);
    let mut curv = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let s = total * i as f64 / n as f64;
        pts.push(path.path_at(s).0);
        let mut acc = 0.0;
        let mut k = 0.0;
        for seg in &segments {
            k = seg.curvature;
            acc += seg.length;
            if s <= acc {
                break;
            }
        }
        curv.push(k);
    }
    (pts, curv)
}

fn line(a: Point2, b: Point2) -> (Vec<Point2>, Vec<f64>) {
    let d = [b[0] - a[0], b[1] - a[1]];
    arc_points(
        a,
        d[1].atan2(d[0]),
        vec![PathSegment::straight(d[0].hypot(d[1]))],
        1.0,
    )
}

impl Layout {
    fn sample(template: MapTemplate, rng: &mut ChaCha8Rng) -> Layout {
        let crosswalk_x = rng.random_range(-4.0..4.0);
        let pedestrian_gap = rng.random_range(3.0..7.0);
        let blocked = template == MapTemplate::Crosswalk && rng.random_bool(0.5);
        let mut vegetation = Vec::new();
        if blocked {
            vegetation.push(Rect {
                x0: crosswalk_x - pedestrian_gap - 3.0,
                x1: crosswalk_x - 2.2,
                y0: -ROAD_HALF_WIDTH - 0.8,
                y1: -ROAD_HALF_WIDTH,
            });
        }
        if rng.random_bool(0.5) {
            let x0 = rng.random_range(-14.0..6.0);
            vegetation.push(Rect {
                x0,
                x1: x0 + rng.random_range(3.0..8.0),
                y0: ROAD_HALF_WIDTH,
                y1: ROAD_HALF_WIDTH + 0.8,
            });
        }
        Layout {
            template,
            crosswalk_x,
            pedestrian_gap,
            blocked,
            vegetation,
        }
    }

    /// Agents in target-priority order.
    fn actors(&self, rng: &mut ChaCha8Rng) -> Vec<Actor> {
        let mut out = Vec::new();
        let mut push = |t: AgentType, motion: MotionProfile, rng: &mut ChaCha8Rng| {
            out.push(Actor {
                agent_type: t,
                motion,
                dims: dims(t, rng),
            });
        };
        match self.template {
            MapTemplate::StraightRoad => {
                let v = rng.random_range(5.0..11.0);
                let m = MotionProfile {
                    stop: maybe_stop(v, 0.25, rng),
                    ..MotionProfile::constant_velocity([rng.random_range(-25.0..-5.0), -LANE_OFFSET], 0.0, v)
                };
                push(AgentType::Vehicle, m, rng);
                let v = rng.random_range(1.0..1.8);
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let heading = if rng.random_bool(0.5) { 0.0 } else { PI };
                let m = MotionProfile {
                    stop: maybe_stop(v, 0.2, rng),
                    ..MotionProfile::constant_velocity([rng.random_range(-10.0..10.0), 5.0 * side], heading, v)
                };
                push(AgentType::Pedestrian, m, rng);
                let m = MotionProfile::constant_velocity(
                    [rng.random_range(-15.0..5.0), -ROAD_HALF_WIDTH + CYCLE_OFFSET],
                    0.0,
                    rng.random_range(3.0..6.0),
                );
                push(AgentType::Cyclist, m, rng);
                let v = rng.random_range(5.0..11.0);
                let m = MotionProfile {
                    stop: maybe_stop(v, 0.25, rng),
                    ..MotionProfile::constant_velocity([rng.random_range(5.0..25.0), LANE_OFFSET], PI, v)
                };
                push(AgentType::Vehicle, m, rng);
            }
            MapTemplate::TIntersection => {
                let x0 = rng.random_range(-25.0..-6.0);
                let mut m = MotionProfile::constant_velocity([x0, -LANE_OFFSET], 0.0, rng.random_range(4.0..9.0));
                if rng.random_bool(0.5) {
                    m.segments = vec![
                        PathSegment::straight(-LANE_OFFSET - x0),
                        PathSegment::arc(TURN_RADIUS, FRAC_PI_2),
                    ];
                }
                push(AgentType::Vehicle, m, rng);
                let x0 = rng.random_range(6.0..20.0);
                let mut m = MotionProfile::constant_velocity(
                    [x0, ROAD_HALF_WIDTH - CYCLE_OFFSET],
                    PI,
                    rng.random_range(3.0..6.0),
                );
                if rng.random_bool(0.5) {
                    m.segments = vec![
                        PathSegment::straight(x0 - ROAD_HALF_WIDTH),
                        PathSegment::arc(CYCLE_OFFSET, -FRAC_PI_2),
                    ];
                }
                push(AgentType::Cyclist, m, rng);
                let x0 = rng.random_range(8.0..25.0);
                let mut m = MotionProfile::constant_velocity([x0, LANE_OFFSET], PI, rng.random_range(4.0..9.0));
                if rng.random_bool(0.5) {
                    m.segments = vec![
                        PathSegment::straight(x0 - LANE_OFFSET - TURN_RADIUS),
                        PathSegment::arc(TURN_RADIUS, -FRAC_PI_2),
                    ];
                }
                push(AgentType::Vehicle, m, rng);
                let heading = if rng.random_bool(0.5) { 0.0 } else { PI };
                let m = MotionProfile::constant_velocity(
                    [rng.random_range(-12.0..-5.0), -5.0],
                    heading,
                    rng.random_range(1.0..1.8),
                );
                push(AgentType::Pedestrian, m, rng);
            }
            MapTemplate::Crosswalk => {
                let xc = self.crosswalk_x;
                let gap = self.pedestrian_gap;
                let mut m = MotionProfile::constant_velocity([xc - gap, -5.0], 0.0, rng.random_range(1.0..1.6));
                m.segments = if self.blocked {
                    vec![PathSegment::straight(gap - 1.5), PathSegment::arc(1.5, FRAC_PI_2)]
                } else {
                    vec![PathSegment::straight(0.5), PathSegment::arc(2.0, FRAC_PI_4)]
                };
                push(AgentType::Pedestrian, m, rng);
                let x0 = xc - rng.random_range(12.0..25.0);
                let v: f64 = rng.random_range(5.0..9.0);
                let mut m = MotionProfile::constant_velocity([x0, -LANE_OFFSET], 0.0, v);
                if rng.random_bool(0.6) {
                    let s_stop = xc - 4.0 - x0;
                    let mut decel = rng.random_range(2.0..4.0);
                    let mut start_time = (s_stop - v * v / (2.0 * decel)) / v;
                    if start_time < 0.0 {
                        decel = v * v / (2.0 * s_stop);
                        start_time = 0.0;
                    }
                    m.stop = Some(Stop { start_time, decel });
                }
                push(AgentType::Vehicle, m, rng);
                let m = MotionProfile::constant_velocity(
                    [rng.random_range(-15.0..0.0), -ROAD_HALF_WIDTH + CYCLE_OFFSET],
                    0.0,
                    rng.random_range(3.0..6.0),
                );
                push(AgentType::Cyclist, m, rng);
                let heading = if rng.random_bool(0.5) { 0.0 } else { PI };
                let m = MotionProfile::constant_velocity(
                    [rng.random_range(-10.0..10.0), 5.0],
                    heading,
                    rng.random_range(1.0..1.8),
                );
                push(AgentType::Pedestrian, m, rng);
            }
        }
        out
    }

    fn map_elements(&self) -> Vec<MapElement> {
        let e = MAP_EXTENT;
        let h = ROAD_HALF_WIDTH;
        let mut raw: Vec<(MapElementKind, (Vec<Point2>, Vec<f64>))> = vec![
            (MapElementKind::LaneCenterline, line([-e, -LANE_OFFSET], [e, -LANE_OFFSET])),
            (MapElementKind::LaneCenterline, line([e, LANE_OFFSET], [-e, LANE_OFFSET])),
            (MapElementKind::RoadBoundary, line([-e, -h], [e, -h])),
        ];
        match self.template {
            MapTemplate::TIntersection => {
                raw.push((MapElementKind::RoadBoundary, line([-e, h], [-h, h])));
                raw.push((MapElementKind::RoadBoundary, line([h, h], [e, h])));
                raw.push((MapElementKind::RoadBoundary, line([-h, h], [-h, e])));
                raw.push((MapElementKind::RoadBoundary, line([h, h], [h, e])));
                raw.push((
                    MapElementKind::LaneCenterline,
                    line([LANE_OFFSET, LANE_OFFSET], [LANE_OFFSET, e]),
                ));
                raw.push((
                    MapElementKind::LaneCenterline,
                    line([-LANE_OFFSET, e], [-LANE_OFFSET, LANE_OFFSET]),
                ));
                raw.push((
                    MapElementKind::LaneCenterline,
                    arc_points(
                        [-LANE_OFFSET, -LANE_OFFSET],
                        0.0,
                        vec![PathSegment::arc(TURN_RADIUS, FRAC_PI_2)],
                        0.5,
                    ),
                ));
                raw.push((
                    MapElementKind::LaneCenterline,
                    arc_points(
                        [LANE_OFFSET + TURN_RADIUS, LANE_OFFSET],
                        PI,
                        vec![PathSegment::arc(TURN_RADIUS, -FRAC_PI_2)],
                        0.5,
                    ),
                ));
            }
            MapTemplate::StraightRoad | MapTemplate::Crosswalk => {
                raw.push((MapElementKind::RoadBoundary, line([-e, h], [e, h])));
            }
        }
        if self.template == MapTemplate::Crosswalk {
            let xc = self.crosswalk_x;
            let pts = vec![
                [xc - 2.0, -h],
                [xc + 2.0, -h],
                [xc + 2.0, h],
                [xc - 2.0, h],
                [xc - 2.0, -h],
            ];
            let curv = vec![0.0; pts.len()];
            raw.push((MapElementKind::Crosswalk, (pts, curv)));
        }
        raw.into_iter()
            .enumerate()
            .map(|(i, (kind, (points, curvature)))| MapElement {
                element_id: i as u64 + 1,
                kind,
                points,
                speed_limit: (kind == MapElementKind::LaneCenterline).then_some(SPEED_LIMIT),
                curvature,
            })
            .collect()
    }

    fn ground_class(&self, p: Point2) -> usize {
        let (x, y) = (p[0], p[1]);
        let h = ROAD_HALF_WIDTH;
        let branch = self.template == MapTemplate::TIntersection && y >= 0.0;
        if self.vegetation.iter().any(|r| r.contains(p)) {
            return class::VEGETATION;
        }
        let on_road = y.abs() < h || (branch && x.abs() < h);
        if on_road {
            if self.template == MapTemplate::Crosswalk && (x - self.crosswalk_x).abs() < 2.0 {
                return class::CROSSWALK;
            }
            return class::ROAD;
        }
        let lateral = if branch { y.abs().min(x.abs()) } else { y.abs() };
        if lateral < h + 0.4 {
            class::CURB
        } else if lateral < SIDEWALK_OUTER {
            class::SIDEWALK
        } else {
            class::TERRAIN
        }
    }

    fn upper_class(&self, p: Point2) -> usize {
        if self.vegetation.iter().any(|r| r.contains(p)) {
            return class::VEGETATION;
        }
        let branch = self.template == MapTemplate::TIntersection && p[1] >= 0.0;
        let lateral = if branch { p[1].abs().min(p[0].abs()) } else { p[1].abs() };
        if lateral > BUILDING_LINE {
            class::BUILDING
        } else {
            class::UNLABELED
        }
    }

    fn voxels(&self, cfg: &VoxelConfig, world: &Pose2, actors: &[Actor]) -> VoxelGrid {
        let s = cfg.cell_size;
        let local_origin = [-(cfg.width as f64) * s / 2.0, -(cfg.height as f64) * s / 2.0];
        let frame = world.compose(&Pose2::new(local_origin[0], local_origin[1], 0.0));
        let (d_n, h_n, w_n) = (cfg.depth, cfg.height, cfg.width);
        let mut labels = vec![class::UNLABELED; d_n * h_n * w_n];
        for r in 0..h_n {
            for c in 0..w_n {
                let p = [
                    local_origin[0] + (c as f64 + 0.5) * s,
                    local_origin[1] + (r as f64 + 0.5) * s,
                ];
                let occupant = actors.iter().find_map(|a| {
                    let reach = 0.5 * a.dims[0].max(a.dims[1]);
                    let q = a.motion.start;
                    ((q[0] - p[0]).abs() <= reach && (q[1] - p[1]).abs() <= reach).then_some(
                        match a.agent_type {
                            AgentType::Vehicle => class::CAR,
                            AgentType::Pedestrian => class::PEDESTRIAN,
                            AgentType::Cyclist => class::BICYCLIST,
                        },
                    )
                });
                for d in 0..d_n {
                    labels[(d * h_n + r) * w_n + c] = match occupant {
                        Some(k) if d < 2 => k,
                        _ if d == 0 => self.ground_class(p),
                        _ if d == 1 => self.upper_class(p),
                        _ => class::UNLABELED,
                    };
                }
            }
        }

        let mut proj_rng = ChaCha8Rng::seed_from_u64(FEATURE_SEED);
        let weights: Vec<f64> = (0..FEATURE_CHANNELS * SEMANTIC_CLASSES)
            .map(|_| proj_rng.random_range(-1.5..1.5))
            .collect();
        let bias: Vec<f64> = (0..FEATURE_CHANNELS)
            .map(|_| proj_rng.random_range(-0.5..0.5))
            .collect();

        let channels = FEATURE_CHANNELS + SEMANTIC_CLASSES + 3;
        let mut features = vec![0.0f32; d_n * h_n * w_n * channels];
        let mut frac = [0.0f64; SEMANTIC_CLASSES];
        for d in 0..d_n {
            for r in 0..h_n {
                for c in 0..w_n {
                    frac.fill(0.0);
                    let mut count = 0.0;
                    for rr in r.saturating_sub(1)..(r + 2).min(h_n) {
                        for cc in c.saturating_sub(1)..(c + 2).min(w_n) {
                            frac[labels[(d * h_n + rr) * w_n + cc]] += 1.0;
                            count += 1.0;
                        }
                    }
                    let base = ((d * h_n + r) * w_n + c) * channels;
                    for (f, b) in bias.iter().enumerate() {
                        let row = &weights[f * SEMANTIC_CLASSES..(f + 1) * SEMANTIC_CLASSES];
                        let z: f64 = row.iter().zip(&frac).map(|(w, q)| w * q / count).sum();
                        features[base + f] = (z + b).tanh() as f32;
                    }
                    features[base + FEATURE_CHANNELS + labels[(d * h_n + r) * w_n + c]] = 1.0;
                }
            }
        }
        let mut grid = VoxelGrid {
            origin: frame.position,
            heading: frame.heading,
            cell_size: s,
            depth: d_n,
            height: h_n,
            width: w_n,
            feature_channels: FEATURE_CHANNELS,
            semantic_classes: SEMANTIC_CLASSES,
            features,
        };
        grid.fill_positions();
        grid
    }
}
