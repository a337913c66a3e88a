//! Intention-query decoder: self-attention among the mode queries,
//! cross-attention over locally searched scene context, and per-layer GMM
//! heads with iterative anchor refinement.

mod kmeans;
mod nms;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kmeans::{inertia, kmeans, KMeans, MAX_ITERATIONS};
pub use nms::{nms_select, NmsResult};

use crate::context_search::{nearest_tokens, trajectory_aware_select, union_select};
use crate::encoder::{pe_tensor, AttentionSublayer, EncodedScene, FeedForward, OUTPUT_SCALE};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::numerics::{Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scene::AgentType;

/// Scalars per mode and step: μx, μy, log σx, log σy, ρ_raw, vx, vy.
pub const REG_CHANNELS: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Intention queries per agent type.
    pub modes: usize,
    /// Budget of the trajectory-aware search, per mode.
    pub trajectory_tokens: usize,
    /// Budget of the motion-aware search shared by all modes.
    pub motion_tokens: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            modes: 16,
            trajectory_tokens: 32,
            motion_tokens: 32,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, model_dim: usize) -> Result<()> {
        if [self.layers, self.heads, self.ffn_dim, self.modes].contains(&0) {
            return Err(Error::config("decoder counts must be positive"));
        }
        if self.trajectory_tokens + self.motion_tokens == 0 {
            return Err(Error::config("decoder context budget must be positive"));
        }
        if !model_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "model_dim {model_dim} not divisible by {} decoder heads",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Clustered endpoints per agent type, target frame, metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentionGoalSet {
    pub goals: BTreeMap<AgentType, Vec<Point2>>,
    /// Seed for the initial goal embeddings.
    pub embedding_seed: u64,
}

impl IntentionGoalSet {
    pub fn validate(&self) -> Result<()> {
        let k = self.modes();
        for t in AgentType::ALL {
            let g = self
                .goals
                .get(&t)
                .ok_or_else(|| Error::contract(format!("no goals for {}", t.name())))?;
            if g.len() != k || k == 0 {
                return Err(Error::contract(format!(
                    "{} has {} goals, expected {k}",
                    t.name(),
                    g.len()
                )));
            }
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("intention goals"));
            }
        }
        Ok(())
    }

    pub fn modes(&self) -> usize {
        self.goals.values().next().map_or(0, Vec::len)
    }

    pub fn for_type(&self, t: AgentType) -> Result<&[Point2]> {
        self.goals
            .get(&t)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("no goals for {}", t.name())))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: IntentionGoalSet = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        set.validate()?;
        Ok(set)
    }
}

/// K-means over the endpoints of every agent type.
pub fn cluster_intention_goals(
    endpoints: &BTreeMap<AgentType, Vec<Point2>>,
    k: usize,
    seed: u64,
) -> Result<IntentionGoalSet> {
    let mut goals = BTreeMap::new();
    for t in AgentType::ALL {
        let pts = endpoints.get(&t).map(Vec::as_slice).unwrap_or_default();
        let km = kmeans(pts, k, seed.wrapping_add(t.index() as u64))
            .map_err(|e| Error::contract(format!("{}: {e}", t.name())))?;
        goals.insert(t, km.centroids);
    }
    let set = IntentionGoalSet {
        goals,
        embedding_seed: seed,
    };
    set.validate()?;
    Ok(set)
}

/// Probabilities and per-step parameters of every mode, metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModeSet {
    pub probabilities: Vec<f64>,
    pub modes: Vec<Vec<[f64; REG_CHANNELS]>>,
}

impl GmmModeSet {
    /// Builds the set from `[1, K]` logits and `[K, T·7]` scaled regression
    /// outputs.
    pub fn from_outputs(logits: &Tensor, reg: &Tensor) -> Result<Self> {
        let k = logits.len();
        if reg.rows() != k || !reg.cols().is_multiple_of(REG_CHANNELS) {
            return Err(Error::Dimension {
                op: "gmm_mode_set",
                lhs: logits.shape().to_vec(),
                rhs: reg.shape().to_vec(),
            });
        }
        let l = logits.data();
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let modes = (0..k)
            .map(|i| {
                reg.row(i)
                    .chunks(REG_CHANNELS)
                    .map(|c| c.try_into().expect("chunk width"))
                    .collect()
            })
            .collect();
        Ok(GmmModeSet {
            probabilities: e.iter().map(|x| x / z).collect(),
            modes,
        })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    pub fn positions(&self, mode: usize) -> Vec<Point2> {
        self.modes[mode].iter().map(|s| [s[0], s[1]]).collect()
    }

    pub fn endpoint(&self, mode: usize) -> Point2 {
        let s = self.modes[mode].last().expect("at least one step");
        [s[0], s[1]]
    }

    pub fn sigma(&self, mode: usize, step: usize) -> Point2 {
        let s = &self.modes[mode][step];
        [s[2].exp(), s[3].exp()]
    }

    pub fn rho(&self, mode: usize, step: usize) -> f64 {
        self.modes[mode][step][4].tanh()
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attention: AttentionSublayer,
    pub cross_attention: AttentionSublayer,
    pub ffn: FeedForward,
    pub cls_head: Mlp,
    pub reg_head: Mlp,
}

/// Outputs of one decoder layer on the tape.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    /// `[1, K]` mode logits.
    pub logits: Var,
    /// `[K, T·7]` regression outputs with positions and velocities in metres.
    pub reg: Var,
    /// Context token indices each mode attended to.
    pub context: Vec<Vec<usize>>,
}

impl LayerOutput {
    pub fn modes(&self, tape: &Tape) -> Result<GmmModeSet> {
        GmmModeSet::from_outputs(tape.value(self.logits), tape.value(self.reg))
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub dim: usize,
    pub future_steps: usize,
    pub layers: Vec<DecoderLayer>,
    pub goal_embeddings: BTreeMap<AgentType, ParamId>,
}

impl Decoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &DecoderConfig,
        dim: usize,
        future_steps: usize,
        embedding_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(dim)?;
        if future_steps == 0 {
            return Err(Error::config("future_steps must be positive"));
        }
        let mut erng = ChaCha8Rng::seed_from_u64(embedding_seed);
        let mut goal_embeddings = BTreeMap::new();
        for t in AgentType::ALL {
            let name = format!("decoder.goal_embedding.{}", t.name());
            goal_embeddings.insert(t, store.add_uniform(name, &[config.modes, dim], dim, &mut erng)?);
        }
        let layers = (0..config.layers)
            .map(|j| {
                let p = format!("decoder.layer{j}");
                Ok(DecoderLayer {
                    self_attention: AttentionSublayer::new(store, &format!("{p}.self_attn"), dim, config.heads, rng)?,
                    cross_attention: AttentionSublayer::new(store, &format!("{p}.cross_attn"), dim, config.heads, rng)?,
                    ffn: FeedForward::new(store, &format!("{p}.ffn"), dim, config.ffn_dim, rng)?,
                    cls_head: Mlp::new(store, &format!("{p}.cls"), &[dim, dim, 1], rng)?,
                    reg_head: Mlp::new(store, &format!("{p}.reg"), &[dim, dim, future_steps * REG_CHANNELS], rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Decoder {
            config: config.clone(),
            dim,
            future_steps,
            layers,
            goal_embeddings,
        })
    }

    fn reg_scale(&self, modes: usize) -> Tensor {
        let row: Vec<f64> = (0..self.future_steps * REG_CHANNELS)
            .map(|c| match c % REG_CHANNELS {
                0 | 1 | 5 | 6 => OUTPUT_SCALE,
                _ => 1.0,
            })
            .collect();
        let data = row.iter().copied().cycle().take(modes * row.len()).collect();
        Tensor::new(vec![modes, row.len()], data).expect("scale shape")
    }

    /// Classification and regression heads of `layer` applied to `[K, C]`
    /// features.
    pub fn heads(&self, tape: &mut Tape, store: &ParamStore, layer: usize, features: Var) -> Result<(Var, Var)> {
        let l = &self.layers[layer];
        let k = tape.shape(features)[0];
        let logits = l.cls_head.forward(tape, store, features)?;
        let logits = tape.reshape(logits, &[1, k])?;
        let raw = l.reg_head.forward(tape, store, features)?;
        let scale = tape.constant(self.reg_scale(k));
        let reg = tape.mul(raw, scale)?;
        Ok((logits, reg))
    }

    /// Runs every decoder layer for a target of type `agent_type`.
    /// `motion_center` anchors the motion-aware search.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scene: &EncodedScene,
        goals: &[Point2],
        agent_type: AgentType,
        motion_center: Point2,
    ) -> Result<Vec<LayerOutput>> {
        let k = self.config.modes;
        if goals.len() != k {
            return Err(Error::contract(format!("{} goals for {k} modes", goals.len())));
        }
        let c = self.dim;
        let t = self.future_steps;
        let positions = &scene.positions;
        let motion = nearest_tokens(positions, motion_center, self.config.motion_tokens);

        let ctx_pe = tape.constant(pe_tensor(positions, c));
        let kv = tape.add(scene.context, ctx_pe)?;
        let embed_id = self.goal_embeddings[&agent_type];
        let embed = tape.param(store, embed_id);

        let mut features = tape.constant(Tensor::zeros(&[k, c]));
        let mut anchors = tape.constant(Tensor::from_rows(goals)?);
        let mut trajectories: Vec<Vec<Point2>> = goals
            .iter()
            .map(|g| (1..=t).map(|s| [g[0] * s as f64 / t as f64, g[1] * s as f64 / t as f64]).collect())
            .collect();
        let dense: Vec<Vec<usize>> = (0..k).map(|_| (0..k).collect()).collect();
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (j, layer) in self.layers.iter().enumerate() {
            let pe = tape.positional_encoding(anchors, c)?;
            let with_pe = tape.add(features, pe)?;
            let qk = tape.add(with_pe, embed)?;
            let intent = layer
                .self_attention
                .forward(tape, store, qk, qk, features, qk, dense.clone())?;

            let context = trajectories
                .iter()
                .map(|traj| {
                    let near = trajectory_aware_select(positions, traj, self.config.trajectory_tokens)?;
                    union_select(&near, &motion)
                })
                .collect::<Result<Vec<_>>>()?;
            if context.iter().any(Vec::is_empty) {
                return Err(Error::contract("empty decoder context selection"));
            }
            let q = tape.add(intent, pe)?;
            let attended = layer
                .cross_attention
                .forward(tape, store, q, kv, kv, q, context.clone())?;
            features = layer.ffn.forward(tape, store, attended)?;

            let (logits, reg) = self.heads(tape, store, j, features)?;
            let last = (t - 1) * REG_CHANNELS;
            let values = tape.value(reg);
            trajectories = (0..k)
                .map(|m| values.row(m).chunks(REG_CHANNELS).map(|s| [s[0], s[1]]).collect())
                .collect();
            anchors = tape.slice_cols(reg, last, last + 2)?;
            outputs.push(LayerOutput { logits, reg, context });
        }
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests;
