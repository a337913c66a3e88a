//! Scene tokenization: agent histories, multi-granular map polylines and
//! multi-granular voxel blocks, all expressed in the target agent's frame.
//!
//! Work splits into a parameter-free stage ([`PreparedScene`] once per
//! scenario, [`TargetInputs`] once per target, including the motion-aware
//! token selection) and the learned encoders in [`TokenEncoders`], which
//! only ever see the selected tokens.

mod encode;
pub mod map;
pub mod voxel;

use serde::{Deserialize, Serialize};

pub use encode::{PolylineEncoder, Token, TokenEncoders, TokenSet, TokenSource};
pub use map::{resample, vectorize_map, MapPolyline, VectorizedMap, MAP_FEATURES};
pub use voxel::{average_pool, pool_voxels, PooledVoxels};

use crate::context_search::{budgeted_nearest, motion_projected_center};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2};
use crate::scene::{AgentTrack, AgentType, Scenario};

/// Scale applied to metric positions, velocities and speeds on the way into
/// the network.
pub const INPUT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapLevel {
    pub points_per_polyline: usize,
    pub point_spacing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GranularitySpec {
    pub map_levels: Vec<MapLevel>,
    /// Pooling cell sizes in metres.
    pub voxel_levels: Vec<f64>,
}

impl Default for GranularitySpec {
    fn default() -> Self {
        GranularitySpec {
            map_levels: vec![
                MapLevel {
                    points_per_polyline: 20,
                    point_spacing: 0.5,
                },
                MapLevel {
                    points_per_polyline: 10,
                    point_spacing: 0.5,
                },
            ],
            voxel_levels: vec![1.6, 0.8],
        }
    }
}

impl GranularitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.map_levels.is_empty() || self.voxel_levels.is_empty() {
            return Err(Error::config("every modality needs at least one granularity level"));
        }
        if self
            .map_levels
            .iter()
            .any(|l| l.points_per_polyline == 0 || !(l.point_spacing > 0.0))
        {
            return Err(Error::config("map levels need positive point counts and spacings"));
        }
        let extent = |l: &MapLevel| l.points_per_polyline as f64 * l.point_spacing;
        if self.map_levels.windows(2).any(|w| extent(&w[0]) <= extent(&w[1])) {
            return Err(Error::config("map levels must be ordered coarse to fine"));
        }
        if self.voxel_levels.iter().any(|s| !(*s > 0.0))
            || self.voxel_levels.windows(2).any(|w| w[0] <= w[1])
        {
            return Err(Error::config("voxel levels must be positive and ordered coarse to fine"));
        }
        Ok(())
    }
}

/// How many context tokens each target sees and where they are searched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub map_tokens: usize,
    pub voxel_tokens: usize,
    /// Optional per-level shares of the budgets; by default one budget
    /// spans all levels.
    pub map_level_fractions: Option<Vec<f64>>,
    pub voxel_level_fractions: Option<Vec<f64>>,
    /// Projection horizon of the motion-aware search, seconds.
    pub tau: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            map_tokens: 64,
            voxel_tokens: 32,
            map_level_fractions: None,
            voxel_level_fractions: None,
            tau: 4.0,
        }
    }
}

/// Rigid transform of world points into the frame of `pose`.
pub fn to_agent_frame(points: &[Point2], pose: &Pose2) -> Vec<Point2> {
    points.iter().map(|p| pose.to_local(*p)).collect()
}

pub fn agent_feature_dim(history_len: usize) -> usize {
    13 + history_len
}

/// Per-step features of one track in the frame of `pose`, valid steps only,
/// with the step indices they came from.
pub fn agent_step_features(track: &AgentTrack, pose: &Pose2) -> (Vec<f64>, Vec<usize>) {
    let th = track.states.len();
    let dim = agent_feature_dim(th);
    let mut rows = Vec::with_capacity(th * dim);
    let mut steps = Vec::with_capacity(th);
    for (i, (s, &valid)) in track.states.iter().zip(&track.valid).enumerate() {
        if !valid {
            continue;
        }
        let p = pose.to_local(s.position());
        let v = pose.vector_to_local(s.velocity());
        let h = pose.heading_to_local(s.heading);
        rows.extend_from_slice(&[
            p[0] * INPUT_SCALE,
            p[1] * INPUT_SCALE,
            v[0] * INPUT_SCALE,
            v[1] * INPUT_SCALE,
            h.cos(),
            h.sin(),
            s.length,
            s.width,
            s.height,
        ]);
        let mut onehot = [0.0; 3];
        onehot[track.agent_type.index()] = 1.0;
        rows.extend_from_slice(&onehot);
        let base = rows.len();
        rows.resize(base + th, 0.0);
        rows[base + i] = 1.0;
        rows.push(1.0);
        steps.push(i);
    }
    (rows, steps)
}

/// Parameter-free per-scenario preprocessing, world frame.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub map: VectorizedMap,
    pub voxels: Vec<PooledVoxels>,
}

impl PreparedScene {
    pub fn new(scenario: &Scenario, spec: &GranularitySpec) -> Result<Self> {
        spec.validate()?;
        Ok(PreparedScene {
            map: vectorize_map(&scenario.map, spec),
            voxels: pool_voxels(&scenario.voxels, spec)?,
        })
    }
}

/// Feature rows of one token source at one granularity; each group of rows
/// becomes one token.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelInputs {
    pub width: usize,
    pub rows: Vec<f64>,
    pub groups: Vec<Vec<usize>>,
    pub positions: Vec<Point2>,
}

impl LevelInputs {
    fn new(width: usize) -> Self {
        LevelInputs {
            width,
            ..Default::default()
        }
    }

    pub fn tokens(&self) -> usize {
        self.positions.len()
    }

    fn push(&mut self, features: &[f64], position: Point2) {
        let first = self.rows.len() / self.width;
        let n = features.len() / self.width;
        self.rows.extend_from_slice(features);
        self.groups.push((first..first + n).collect());
        self.positions.push(position);
    }
}

/// Everything one target needs before the learned encoders run.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetInputs {
    pub scenario_id: String,
    pub target_id: u64,
    pub target_type: AgentType,
    /// World pose of the target at the current step.
    pub pose: Pose2,
    /// Target velocity in its own frame.
    pub velocity: Point2,
    pub motion_center: Point2,
    pub agents: LevelInputs,
    pub agent_ids: Vec<u64>,
    /// Position of the target among the agent tokens.
    pub target_token: usize,
    pub maps: Vec<LevelInputs>,
    pub voxels: Vec<LevelInputs>,
    /// Ground-truth futures `(x, y, vx, vy)` per agent token, target frame.
    pub agent_futures: Vec<Option<Vec<[f64; 4]>>>,
    pub history_len: usize,
}

impl TargetInputs {
    pub fn target_future(&self) -> Option<&[[f64; 4]]> {
        self.agent_futures[self.target_token].as_deref()
    }

    pub fn token_count(&self) -> usize {
        self.agents.tokens()
            + self.maps.iter().map(LevelInputs::tokens).sum::<usize>()
            + self.voxels.iter().map(LevelInputs::tokens).sum::<usize>()
    }
}

fn last_valid(track: &AgentTrack) -> Option<usize> {
    track.valid.iter().rposition(|v| *v)
}

/// Builds the inputs for `target_id`, selecting map and voxel tokens around
/// the motion-projected center.
pub fn build_target_inputs(
    scenario: &Scenario,
    prepared: &PreparedScene,
    target_id: u64,
    selection: &SelectionConfig,
) -> Result<TargetInputs> {
    let target = scenario
        .agent(target_id)
        .ok_or_else(|| Error::contract(format!("target {target_id} not in scenario")))?;
    if !target.current_valid() {
        return Err(Error::contract(format!(
            "target {target_id} has no valid current state"
        )));
    }
    let cur = target.current();
    let pose = cur.pose();
    let velocity = pose.vector_to_local(cur.velocity());
    let motion_center = motion_projected_center([0.0, 0.0], velocity, selection.tau);
    let th = target.states.len();

    let mut agents = LevelInputs::new(agent_feature_dim(th));
    let mut agent_ids = Vec::new();
    let mut agent_futures = Vec::new();
    let mut target_token = 0;
    for track in &scenario.agents {
        let Some(last) = last_valid(track) else {
            continue;
        };
        let (rows, _) = agent_step_features(track, &pose);
        if track.agent_id == target_id {
            target_token = agent_ids.len();
        }
        agents.push(&rows, pose.to_local(track.states[last].position()));
        agent_ids.push(track.agent_id);
        agent_futures.push(track.future.as_ref().map(|f| {
            f.iter()
                .map(|s| {
                    let p = pose.to_local([s.x, s.y]);
                    let v = pose.vector_to_local([s.vx, s.vy]);
                    [p[0], p[1], v[0], v[1]]
                })
                .collect()
        }));
    }

    let map_positions: Vec<Vec<Point2>> = prepared
        .map
        .levels
        .iter()
        .map(|l| l.iter().map(|p| pose.to_local(p.centroid)).collect())
        .collect();
    let map_sel = budgeted_nearest(
        &map_positions,
        motion_center,
        selection.map_tokens,
        selection.map_level_fractions.as_deref(),
    )?;
    let maps = map_sel
        .iter()
        .enumerate()
        .map(|(li, idx)| {
            let mut level = LevelInputs::new(MAP_FEATURES);
            for &i in idx {
                level.push(&prepared.map.levels[li][i].features(&pose), map_positions[li][i]);
            }
            level
        })
        .collect();

    let voxel_positions: Vec<Vec<Point2>> = prepared
        .voxels
        .iter()
        .map(|l| l.centers.iter().map(|c| pose.to_local(*c)).collect())
        .collect();
    let voxel_sel = budgeted_nearest(
        &voxel_positions,
        motion_center,
        selection.voxel_tokens,
        selection.voxel_level_fractions.as_deref(),
    )?;
    let voxels = voxel_sel
        .iter()
        .enumerate()
        .map(|(li, idx)| {
            let pooled = &prepared.voxels[li];
            let mut level = LevelInputs::new(pooled.channels);
            let mut row = Vec::with_capacity(pooled.channels);
            for &i in idx {
                row.clear();
                pooled.features_in(i, &pose, &mut row);
                level.push(&row, voxel_positions[li][i]);
            }
            level
        })
        .collect();

    Ok(TargetInputs {
        scenario_id: scenario.scenario_id.clone(),
        target_id,
        target_type: target.agent_type,
        pose,
        velocity,
        motion_center,
        agents,
        agent_ids,
        target_token,
        maps,
        voxels,
        agent_futures,
        history_len: th,
    })
}

#[cfg(test)]
mod tests;
