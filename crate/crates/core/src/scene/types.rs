use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Vehicle, AgentType::Pedestrian, AgentType::Cyclist];

    pub fn index(self) -> usize {
        match self {
            AgentType::Vehicle => 0,
            AgentType::Pedestrian => 1,
            AgentType::Cyclist => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Vehicle => "Vehicle",
            AgentType::Pedestrian => "Pedestrian",
            AgentType::Cyclist => "Cyclist",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl AgentState {
    pub fn position(&self) -> Point2 {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> Point2 {
        [self.vx, self.vy]
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.heading)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FutureState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u64,
    pub agent_type: AgentType,
    pub states: Vec<AgentState>,
    pub valid: Vec<bool>,
    #[serde(default)]
    pub future: Option<Vec<FutureState>>,
}

impl AgentTrack {
    pub fn current(&self) -> &AgentState {
        self.states.last().expect("track has at least one state")
    }

    pub fn current_valid(&self) -> bool {
        self.valid.last().copied().unwrap_or(false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapElementKind {
    LaneCenterline,
    RoadBoundary,
    Crosswalk,
}

impl MapElementKind {
    pub fn index(self) -> usize {
        match self {
            MapElementKind::LaneCenterline => 0,
            MapElementKind::RoadBoundary => 1,
            MapElementKind::Crosswalk => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub element_id: u64,
    pub kind: MapElementKind,
    pub points: Vec<Point2>,
    #[serde(default)]
    pub speed_limit: Option<f64>,
    pub curvature: Vec<f64>,
}

/// Dense per-voxel context features, laid out `[depth][row][col][channel]`.
///
/// Cell `(d, r, c)` has its center at `origin + R(heading)·((c+½)·s, (r+½)·s)`
/// and elevation `(d+½)·s`. Channels are the segmentation features, then the
/// one-hot semantic label, then the world-frame center `(x, y, z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "super::io::VoxelRecord", try_from = "super::io::VoxelRecord")]
pub struct VoxelGrid {
    pub origin: Point2,
    pub heading: f64,
    pub cell_size: f64,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub feature_channels: usize,
    pub semantic_classes: usize,
    pub features: Vec<f32>,
}

impl VoxelGrid {
    pub fn channels(&self) -> usize {
        self.feature_channels + self.semantic_classes + 3
    }

    pub fn index(&self, d: usize, r: usize, c: usize) -> usize {
        ((d * self.height + r) * self.width + c) * self.channels()
    }

    pub fn voxel(&self, d: usize, r: usize, c: usize) -> &[f32] {
        let i = self.index(d, r, c);
        &self.features[i..i + self.channels()]
    }

    pub fn frame(&self) -> Pose2 {
        Pose2 {
            position: self.origin,
            heading: self.heading,
        }
    }

    /// Analytic world-frame center of the axis-aligned block of cells
    /// spanning rows `r0..r1` and columns `c0..c1` (grid units).
    pub fn block_center(&self, r0: f64, r1: f64, c0: f64, c1: f64) -> Point2 {
        let s = self.cell_size;
        self.frame()
            .to_world([0.5 * (c0 + c1) * s, 0.5 * (r0 + r1) * s])
    }

    pub fn cell_center(&self, d: usize, r: usize, c: usize) -> [f64; 3] {
        let p = self.block_center(r as f64, r as f64 + 1.0, c as f64, c as f64 + 1.0);
        [p[0], p[1], (d as f64 + 0.5) * self.cell_size]
    }

    /// Rewrites every position channel from the analytic cell centers.
    pub fn fill_positions(&mut self) {
        let off = self.feature_channels + self.semantic_classes;
        for d in 0..self.depth {
            for r in 0..self.height {
                for c in 0..self.width {
                    let center = self.cell_center(d, r, c);
                    let i = self.index(d, r, c) + off;
                    for (k, v) in center.iter().enumerate() {
                        self.features[i + k] = *v as f32;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub timestamp_step: f64,
    pub agents: Vec<AgentTrack>,
    pub map: Vec<MapElement>,
    pub voxels: VoxelGrid,
    pub targets: Vec<u64>,
}

impl Scenario {
    pub fn agent(&self, id: u64) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    pub fn agent_index(&self, id: u64) -> Option<usize> {
        self.agents.iter().position(|a| a.agent_id == id)
    }

    pub fn history_len(&self) -> usize {
        self.agents.first().map_or(0, |a| a.states.len())
    }

    pub fn future_len(&self) -> usize {
        self.agents
            .iter()
            .find_map(|a| a.future.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    /// Checks every structural invariant of the scenario.
    pub fn validate(&self) -> Result<()> {
        let id = &self.scenario_id;
        if !(self.timestamp_step > 0.0) {
            return Err(Error::contract(format!("{id}: non-positive timestamp_step")));
        }
        let th = self.history_len();
        let tf = self.future_len();
        for a in &self.agents {
            if a.states.is_empty() || a.states.len() != th || a.valid.len() != th {
                return Err(Error::contract(format!(
                    "{id}: agent {} has {} states and {} validity flags, expected {th}",
                    a.agent_id,
                    a.states.len(),
                    a.valid.len()
                )));
            }
            for (s, &v) in a.states.iter().zip(&a.valid) {
                if !v && *s != AgentState::default() {
                    return Err(Error::contract(format!(
                        "{id}: agent {} invalid step is not zero padded",
                        a.agent_id
                    )));
                }
                if !(s.heading > -PI && s.heading <= PI) {
                    return Err(Error::contract(format!(
                        "{id}: agent {} heading {} outside (-pi, pi]",
                        a.agent_id, s.heading
                    )));
                }
                let vals = [s.x, s.y, s.vx, s.vy, s.length, s.width, s.height];
                if vals.iter().any(|x| !x.is_finite()) {
                    return Err(Error::contract(format!("{id}: agent {} non-finite state", a.agent_id)));
                }
            }
            if let Some(f) = &a.future {
                if f.len() != tf {
                    return Err(Error::contract(format!(
                        "{id}: agent {} future length {} differs from {tf}",
                        a.agent_id,
                        f.len()
                    )));
                }
            }
        }
        let mut ids: Vec<u64> = self.agents.iter().map(|a| a.agent_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract(format!("{id}: duplicate agent ids")));
        }
        for m in &self.map {
            if m.points.len() < 2 {
                return Err(Error::contract(format!("{id}: map element {} has < 2 points", m.element_id)));
            }
            if m.points.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::contract(format!(
                    "{id}: map element {} repeats a point",
                    m.element_id
                )));
            }
            if m.curvature.len() != m.points.len() {
                return Err(Error::contract(format!(
                    "{id}: map element {} curvature length mismatch",
                    m.element_id
                )));
            }
        }
        self.validate_voxels()?;
        for t in &self.targets {
            match self.agent(*t) {
                Some(a) if a.current_valid() => {}
                Some(_) => {
                    return Err(Error::contract(format!("{id}: target {t} has an invalid current state")))
                }
                None => return Err(Error::contract(format!("{id}: target {t} not among agents"))),
            }
        }
        Ok(())
    }

    fn validate_voxels(&self) -> Result<()> {
        let g = &self.voxels;
        let id = &self.scenario_id;
        if g.depth == 0 || g.height == 0 || g.width == 0 || !(g.cell_size > 0.0) {
            return Err(Error::contract(format!("{id}: empty voxel grid")));
        }
        if g.features.len() != g.depth * g.height * g.width * g.channels() {
            return Err(Error::contract(format!(
                "{id}: voxel feature length {} does not match shape",
                g.features.len()
            )));
        }
        let off = g.feature_channels + g.semantic_classes;
        for d in 0..g.depth {
            for r in 0..g.height {
                for c in 0..g.width {
                    let center = g.cell_center(d, r, c);
                    let v = g.voxel(d, r, c);
                    if (0..3).any(|k| v[off + k] != center[k] as f32) {
                        return Err(Error::contract(format!(
                            "{id}: voxel ({d},{r},{c}) position channels disagree with its center"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies a global rigid transform to every geometric quantity.
    pub fn transformed(&self, t: &Pose2) -> Scenario {
        let mut out = self.clone();
        for a in &mut out.agents {
            for (s, &v) in a.states.iter_mut().zip(&a.valid) {
                if !v {
                    continue;
                }
                let p = t.to_world(s.position());
                let vel = t.vector_to_world(s.velocity());
                s.x = p[0];
                s.y = p[1];
                s.vx = vel[0];
                s.vy = vel[1];
                s.heading = t.heading_to_world(s.heading);
            }
            if let Some(f) = &mut a.future {
                for s in f {
                    let p = t.to_world([s.x, s.y]);
                    let vel = t.vector_to_world([s.vx, s.vy]);
                    *s = FutureState {
                        x: p[0],
                        y: p[1],
                        vx: vel[0],
                        vy: vel[1],
                    };
                }
            }
        }
        for m in &mut out.map {
            for p in &mut m.points {
                *p = t.to_world(*p);
            }
        }
        let frame = t.compose(&out.voxels.frame());
        out.voxels.origin = frame.position;
        out.voxels.heading = frame.heading;
        out.voxels.fill_positions();
        out
    }
}
