use rand::Rng;
use serde::Serialize;

use super::{agent_feature_dim, GranularitySpec, LevelInputs, TargetInputs, MAP_FEATURES};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::numerics::{Linear, Mlp, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TokenSource {
    Agent,
    Map(usize),
    Voxel(usize),
}

/// A materialized token, for inspection and dumps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Token {
    pub feature: Vec<f64>,
    pub ref_position: Point2,
    pub source: TokenSource,
}

/// Token features on a tape (`[n, C]`) with their reference positions.
#[derive(Clone, Debug)]
pub struct TokenSet {
    pub features: Var,
    pub positions: Vec<Point2>,
    pub sources: Vec<TokenSource>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn agent_count(&self) -> usize {
        self.sources.iter().filter(|s| **s == TokenSource::Agent).count()
    }

    pub fn tokens(&self, tape: &Tape) -> Vec<Token> {
        let f = tape.value(self.features);
        (0..self.len())
            .map(|i| Token {
                feature: f.row(i).to_vec(),
                ref_position: self.positions[i],
                source: self.sources[i],
            })
            .collect()
    }
}

/// PointNet-style set encoder: shared MLP per point, masked max over each
/// polyline, then a linear map.
#[derive(Clone, Debug)]
pub struct PolylineEncoder {
    pub pre: Mlp,
    pub post: Linear,
}

impl PolylineEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(PolylineEncoder {
            pre: Mlp::new(store, &format!("{name}.pre"), &[in_dim, dim, dim], rng)?,
            post: Linear::new(store, &format!("{name}.post"), dim, dim, rng)?,
        })
    }

    /// `points` is `[rows, in_dim]`; each group lists the rows of one
    /// polyline. Rows not in any group never affect the output.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        points: Var,
        groups: &[Vec<usize>],
    ) -> Result<Var> {
        let h = self.pre.forward(tape, store, points)?;
        let pooled = tape.group_max(h, groups)?;
        self.post.forward(tape, store, pooled)
    }

    fn encode_level(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        level: &LevelInputs,
    ) -> Result<Var> {
        let rows = Tensor::new(
            vec![level.rows.len() / level.width, level.width],
            level.rows.clone(),
        )?;
        let x = tape.constant(rows);
        self.forward(tape, store, x, &level.groups)
    }
}

/// Learned token encoders, with separate parameters per source and level.
#[derive(Clone, Debug)]
pub struct TokenEncoders {
    pub dim: usize,
    pub agent: PolylineEncoder,
    pub maps: Vec<PolylineEncoder>,
    pub voxels: Vec<Mlp>,
}

impl TokenEncoders {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        spec: &GranularitySpec,
        history_len: usize,
        voxel_channels: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let agent = PolylineEncoder::new(
            store,
            "tokenizer.agent",
            agent_feature_dim(history_len),
            dim,
            rng,
        )?;
        let maps = (0..spec.map_levels.len())
            .map(|i| PolylineEncoder::new(store, &format!("tokenizer.map{i}"), MAP_FEATURES, dim, rng))
            .collect::<Result<_>>()?;
        let voxels = (0..spec.voxel_levels.len())
            .map(|i| Mlp::new(store, &format!("tokenizer.voxel{i}"), &[voxel_channels, dim, dim], rng))
            .collect::<Result<_>>()?;
        Ok(TokenEncoders {
            dim,
            agent,
            maps,
            voxels,
        })
    }

    /// Encodes agents, then map levels, then voxel levels, in that order.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &TargetInputs) -> Result<TokenSet> {
        if inputs.maps.len() != self.maps.len() || inputs.voxels.len() != self.voxels.len() {
            return Err(Error::contract(format!(
                "inputs carry {} map and {} voxel levels, encoders expect {} and {}",
                inputs.maps.len(),
                inputs.voxels.len(),
                self.maps.len(),
                self.voxels.len()
            )));
        }
        let mut parts = Vec::new();
        let mut positions = Vec::with_capacity(inputs.token_count());
        let mut sources = Vec::with_capacity(inputs.token_count());

        parts.push(self.agent.encode_level(tape, store, &inputs.agents)?);
        positions.extend_from_slice(&inputs.agents.positions);
        sources.extend(std::iter::repeat_n(TokenSource::Agent, inputs.agents.tokens()));

        for (i, (enc, level)) in self.maps.iter().zip(&inputs.maps).enumerate() {
            if level.tokens() == 0 {
                continue;
            }
            parts.push(enc.encode_level(tape, store, level)?);
            positions.extend_from_slice(&level.positions);
            sources.extend(std::iter::repeat_n(TokenSource::Map(i), level.tokens()));
        }
        for (i, (mlp, level)) in self.voxels.iter().zip(&inputs.voxels).enumerate() {
            if level.tokens() == 0 {
                continue;
            }
            let x = tape.constant(Tensor::new(
                vec![level.tokens(), level.width],
                level.rows.clone(),
            )?);
            parts.push(mlp.forward(tape, store, x)?);
            positions.extend_from_slice(&level.positions);
            sources.extend(std::iter::repeat_n(TokenSource::Voxel(i), level.tokens()));
        }
        let features = tape.concat_rows(&parts)?;
        Ok(TokenSet {
            features,
            positions,
            sources,
        })
    }
}
