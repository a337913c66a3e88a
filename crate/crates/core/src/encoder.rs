//! Local-attention transformer encoder with future state enhancement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context_search::knn_neighbors;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::numerics::{
    encode_position_into, pe_frequencies, LayerNorm, Linear, Mlp, ParamStore, Tape, Tensor, Var,
};
use crate::tokenizer::{PolylineEncoder, TokenSet, TokenSource};

/// Scale mapping raw head outputs to metres (and m/s).
pub const OUTPUT_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub knn_k: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            heads: 2,
            model_dim: 64,
            ffn_dim: 128,
            knn_k: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.ffn_dim == 0 || self.knn_k == 0 {
            return Err(Error::config("encoder counts must be positive"));
        }
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) || !self.model_dim.is_multiple_of(4) {
            return Err(Error::config(format!(
                "model_dim {} must be a positive multiple of 4 and of heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Sinusoidal encoding of a planar position: `dim/4` geometric frequency
/// bands from 1 to 1/1000 rad/m per axis, `(sin, cos)` interleaved, the x
/// bands filling the first half and the y bands the second.
pub fn positional_encoding(p: Point2, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    encode_position_into(&pe_frequencies(dim), p, &mut out);
    out
}

/// Constant `[n, dim]` positional encodings of `positions`.
pub fn pe_tensor(positions: &[Point2], dim: usize) -> Tensor {
    let freqs = pe_frequencies(dim);
    let mut data = vec![0.0; positions.len() * dim];
    for (i, p) in positions.iter().enumerate() {
        encode_position_into(&freqs, *p, &mut data[i * dim..(i + 1) * dim]);
    }
    Tensor::new(vec![positions.len(), dim], data).expect("pe shape")
}

/// Multi-head attention with output projection, residual and layer norm.
#[derive(Clone, Debug)]
pub struct AttentionSublayer {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub norm: LayerNorm,
    pub heads: usize,
}

impl AttentionSublayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(AttentionSublayer {
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, rng)?,
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, rng)?,
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, rng)?,
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
            heads,
        })
    }

    /// `norm(residual + Wo·attend(Wq·q, Wk·k, Wv·v))` with query `i`
    /// restricted to the key rows in `neighbors[i]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q: Var,
        k: Var,
        v: Var,
        residual: Var,
        neighbors: Vec<Vec<usize>>,
    ) -> Result<Var> {
        let q = self.wq.forward(tape, store, q)?;
        let k = self.wk.forward(tape, store, k)?;
        let v = self.wv.forward(tape, store, v)?;
        let a = tape.neighbor_attention(q, k, v, neighbors, self.heads)?;
        let o = self.wo.forward(tape, store, a)?;
        let s = tape.add(residual, o)?;
        self.norm.forward(tape, store, s)
    }
}

/// Position-wise feed-forward network with residual and layer norm.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub mlp: Mlp,
    pub norm: LayerNorm,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(FeedForward {
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[dim, hidden, dim], rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.mlp.forward(tape, store, x)?;
        let s = tape.add(x, h)?;
        self.norm.forward(tape, store, s)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: AttentionSublayer,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    /// One local self-attention layer: queries and keys carry the positional
    /// encoding, values do not.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        pe: Var,
        neighbors: Vec<Vec<usize>>,
    ) -> Result<Var> {
        let qk = tape.add(x, pe)?;
        let h = self.attention.forward(tape, store, qk, qk, x, x, neighbors)?;
        self.ffn.forward(tape, store, h)
    }
}

/// Output of the encoder for one target.
#[derive(Clone, Debug)]
pub struct EncodedScene {
    /// Refined tokens after the attention stack (same order as the input).
    pub refined: Var,
    /// Agent tokens fused with their encoded future trajectories.
    pub future_aware_agents: Var,
    /// Future-aware agents followed by the refined map and voxel tokens.
    pub context: Var,
    pub positions: Vec<Point2>,
    pub sources: Vec<TokenSource>,
    pub agent_count: usize,
    /// Predicted `(x, y, vx, vy)` per future step per agent, `[agents, T·4]`,
    /// in metres.
    pub aux: Var,
}

#[derive(Clone, Debug)]
pub struct FutureEnhancer {
    pub head: Mlp,
    pub encoder: PolylineEncoder,
    pub fuse: Linear,
    pub future_steps: usize,
}

impl FutureEnhancer {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, future_steps: usize, rng: &mut R) -> Result<Self> {
        Ok(FutureEnhancer {
            head: Mlp::new(store, "encoder.future.head", &[dim, dim, future_steps * 4], rng)?,
            encoder: PolylineEncoder::new(store, "encoder.future.polyline", 5, dim, rng)?,
            fuse: Linear::new(store, "encoder.future.fuse", 2 * dim, dim, rng)?,
            future_steps,
        })
    }

    /// Returns `(aux trajectories in metres, future-aware agent features)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, agents: Var) -> Result<(Var, Var)> {
        let n = tape.shape(agents)[0];
        let t = self.future_steps;
        let raw = self.head.forward(tape, store, agents)?;
        let aux = tape.scale(raw, OUTPUT_SCALE);
        let steps = tape.reshape(raw, &[n * t, 4])?;
        let time: Vec<f64> = (0..n).flat_map(|_| (1..=t).map(|k| k as f64 / t as f64)).collect();
        let time = tape.constant(Tensor::new(vec![n * t, 1], time)?);
        let points = tape.concat_cols(&[steps, time])?;
        let groups: Vec<Vec<usize>> = (0..n).map(|a| (a * t..(a + 1) * t).collect()).collect();
        let future = self.encoder.forward(tape, store, points, &groups)?;
        let both = tape.concat_cols(&[agents, future])?;
        let fused = self.fuse.forward(tape, store, both)?;
        Ok((aux, fused))
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
    pub future: FutureEnhancer,
}

impl Encoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        future_steps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.model_dim;
        let layers = (0..config.layers)
            .map(|j| {
                Ok(EncoderLayer {
                    attention: AttentionSublayer::new(store, &format!("encoder.layer{j}.attn"), c, config.heads, rng)?,
                    ffn: FeedForward::new(store, &format!("encoder.layer{j}.ffn"), c, config.ffn_dim, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Encoder {
            config: config.clone(),
            layers,
            future: FutureEnhancer::new(store, c, future_steps, rng)?,
        })
    }

    /// Runs the attention stack over `tokens`, each attending to its
    /// `knn_k` nearest tokens (itself included).
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, tokens: &TokenSet) -> Result<Var> {
        let k = self.config.knn_k.min(tokens.len());
        let neighbors = knn_neighbors(&tokens.positions, k)?;
        self.encode_with(tape, store, tokens, &neighbors)
    }

    pub fn encode_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &TokenSet,
        neighbors: &[Vec<usize>],
    ) -> Result<Var> {
        let pe = tape.constant(pe_tensor(&tokens.positions, self.config.model_dim));
        let mut x = tokens.features;
        for layer in &self.layers {
            x = layer.forward(tape, store, x, pe, neighbors.to_vec())?;
        }
        Ok(x)
    }

    /// Encoding followed by future state enhancement of the agent tokens.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: &TokenSet) -> Result<EncodedScene> {
        let refined = self.encode(tape, store, tokens)?;
        let n = tokens.len();
        let na = tokens.agent_count();
        if na == 0 || tokens.sources[..na].iter().any(|s| *s != TokenSource::Agent) {
            return Err(Error::contract("token set must start with at least one agent token"));
        }
        let agents = tape.gather_rows(refined, &(0..na).collect::<Vec<_>>())?;
        let (aux, future_aware_agents) = self.future.forward(tape, store, agents)?;
        let context = if n > na {
            let rest = tape.gather_rows(refined, &(na..n).collect::<Vec<_>>())?;
            tape.concat_rows(&[future_aware_agents, rest])?
        } else {
            future_aware_agents
        };
        Ok(EncodedScene {
            refined,
            future_aware_agents,
            context,
            positions: tokens.positions.clone(),
            sources: tokens.sources.clone(),
            agent_count: na,
            aux,
        })
    }
}
