//! The full network: token encoders, encoder and decoder over one parameter
//! store, plus the per-target forward, loss and prediction entry points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{nms_select, Decoder, DecoderConfig, GmmModeSet, IntentionGoalSet, LayerOutput, NmsResult};
use crate::encoder::{EncodedScene, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2};
use crate::loss::{target_loss, LossWeights, TargetLoss};
use crate::numerics::{ParamStore, Tape};
use crate::scene::{AgentType, Scenario};
use crate::tokenizer::{
    build_target_inputs, GranularitySpec, PreparedScene, SelectionConfig, TargetInputs, TokenEncoders, TokenSet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub granularity: GranularitySpec,
    pub selection: SelectionConfig,
    /// Without voxel tokens the voxel budget is zero.
    pub use_voxel_tokens: bool,
    /// Without motion-aware search the context is centred on the target's
    /// current position.
    pub motion_aware_search: bool,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            granularity: GranularitySpec::default(),
            selection: SelectionConfig::default(),
            use_voxel_tokens: true,
            motion_aware_search: true,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.granularity.validate()?;
        self.encoder.validate()?;
        self.decoder.validate(self.encoder.model_dim)?;
        if !(self.selection.tau >= 0.0) {
            return Err(Error::config("tau must be non-negative"));
        }
        Ok(())
    }

    /// Selection with the ablation switches applied.
    pub fn effective_selection(&self) -> SelectionConfig {
        let mut s = self.selection.clone();
        if !self.use_voxel_tokens {
            s.voxel_tokens = 0;
        }
        if !self.motion_aware_search {
            s.tau = 0.0;
        }
        s
    }
}

/// Input and output sizes fixed by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataShape {
    pub history_len: usize,
    pub future_steps: usize,
    pub voxel_channels: usize,
}

impl DataShape {
    pub fn of(scenario: &Scenario) -> Result<Self> {
        let future_steps = scenario.future_len();
        if future_steps == 0 {
            return Err(Error::contract(format!("scenario {} has no futures", scenario.scenario_id)));
        }
        Ok(DataShape {
            history_len: scenario.history_len(),
            future_steps,
            voxel_channels: scenario.voxels.channels(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmsConfig {
    pub keep: usize,
    pub radius: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig { keep: 6, radius: 2.5 }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub tokens: TokenSet,
    pub encoded: EncodedScene,
    pub layers: Vec<LayerOutput>,
}

/// Final-layer prediction for one target, target frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPrediction {
    pub scenario_id: String,
    pub target_id: u64,
    pub agent_type: AgentType,
    pub pose: Pose2,
    pub all_modes: GmmModeSet,
    pub selected: NmsResult,
}

impl TargetPrediction {
    pub fn trajectories(&self) -> Vec<Vec<Point2>> {
        (0..self.selected.modes.len()).map(|m| self.selected.modes.positions(m)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub shape: DataShape,
    pub goals: IntentionGoalSet,
    pub store: ParamStore,
    pub tokenizer: TokenEncoders,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(config: &ModelConfig, shape: DataShape, goals: IntentionGoalSet, seed: u64) -> Result<Self> {
        config.validate()?;
        goals.validate()?;
        if goals.modes() != config.decoder.modes {
            return Err(Error::config(format!(
                "goal set has {} modes, decoder expects {}",
                goals.modes(),
                config.decoder.modes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.encoder.model_dim;
        let tokenizer = TokenEncoders::new(
            &mut store,
            &config.granularity,
            shape.history_len,
            shape.voxel_channels,
            c,
            &mut rng,
        )?;
        let encoder = Encoder::new(&mut store, &config.encoder, shape.future_steps, &mut rng)?;
        let decoder = Decoder::new(
            &mut store,
            &config.decoder,
            c,
            shape.future_steps,
            goals.embedding_seed,
            &mut rng,
        )?;
        Ok(Model {
            config: config.clone(),
            shape,
            goals,
            store,
            tokenizer,
            encoder,
            decoder,
        })
    }

    pub fn prepare(&self, scenario: &Scenario) -> Result<PreparedScene> {
        PreparedScene::new(scenario, &self.config.granularity)
    }

    pub fn target_inputs(&self, scenario: &Scenario, prepared: &PreparedScene, target: u64) -> Result<TargetInputs> {
        build_target_inputs(scenario, prepared, target, &self.config.effective_selection())
    }

    /// Inputs of every target of every scenario, in order.
    pub fn scenario_inputs(&self, scenarios: &[Scenario]) -> Result<Vec<TargetInputs>> {
        let mut out = Vec::new();
        for s in scenarios {
            let prepared = self.prepare(s)?;
            for &t in &s.targets {
                out.push(self.target_inputs(s, &prepared, t)?);
            }
        }
        Ok(out)
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &TargetInputs) -> Result<ForwardOutput> {
        if inputs.history_len != self.shape.history_len {
            return Err(Error::contract(format!(
                "history of {} steps, model expects {}",
                inputs.history_len, self.shape.history_len
            )));
        }
        let tokens = self.tokenizer.forward(tape, &self.store, inputs)?;
        let encoded = self.encoder.forward(tape, &self.store, &tokens)?;
        let goals = self.goals.for_type(inputs.target_type)?;
        let layers = self.decoder.decode(
            tape,
            &self.store,
            &encoded,
            goals,
            inputs.target_type,
            inputs.motion_center,
        )?;
        Ok(ForwardOutput {
            tokens,
            encoded,
            layers,
        })
    }

    pub fn loss(
        &self,
        tape: &mut Tape,
        inputs: &TargetInputs,
        out: &ForwardOutput,
        weights: &LossWeights,
    ) -> Result<TargetLoss> {
        let gt = inputs
            .target_future()
            .ok_or_else(|| Error::contract(format!("target {} has no ground-truth future", inputs.target_id)))?;
        let valid = vec![true; gt.len()];
        target_loss(tape, &out.layers, out.encoded.aux, &inputs.agent_futures, gt, &valid, weights)
    }

    pub fn predict(&self, inputs: &TargetInputs, nms: &NmsConfig) -> Result<TargetPrediction> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, inputs)?;
        let last = out.layers.last().expect("at least one decoder layer");
        let all_modes = last.modes(&tape)?;
        let selected = nms_select(&all_modes, nms.keep.min(all_modes.len()), nms.radius);
        Ok(TargetPrediction {
            scenario_id: inputs.scenario_id.clone(),
            target_id: inputs.target_id,
            agent_type: inputs.target_type,
            pose: inputs.pose,
            all_modes,
            selected,
        })
    }

    /// Copy with every parameter rounded to 32-bit precision.
    pub fn rounded_to_f32(&self) -> Model {
        let mut m = self.clone();
        for p in m.store.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_synthetic;
    use crate::train::{cluster_goals, tests::tiny_config};

    fn tiny_model(c: &crate::config::RunConfig) -> (Model, Vec<TargetInputs>) {
        let scenarios = generate_synthetic(c.seed, &c.synthetic).unwrap();
        let goals = cluster_goals(&scenarios, c.model.decoder.modes, 0).unwrap();
        let model = Model::new(&c.model, DataShape::of(&scenarios[0]).unwrap(), goals, 9).unwrap();
        let inputs = model.scenario_inputs(&scenarios).unwrap();
        (model, inputs)
    }

    #[test]
    fn ablation_switches_shape_the_selection() {
        let mut c = ModelConfig::default();
        assert_eq!(c.effective_selection(), c.selection);
        c.use_voxel_tokens = false;
        c.motion_aware_search = false;
        let s = c.effective_selection();
        assert_eq!(s.voxel_tokens, 0);
        assert_eq!(s.tau, 0.0);
        assert_eq!(s.map_tokens, c.selection.map_tokens);
    }

    #[test]
    fn voxel_switch_removes_voxel_tokens() {
        let mut c = tiny_config();
        c.model.use_voxel_tokens = false;
        let (_, inputs) = tiny_model(&c);
        assert!(inputs.iter().all(|i| i.voxels.iter().all(|l| l.tokens() == 0)));
    }

    #[test]
    fn forward_shapes_and_prediction() {
        let c = tiny_config();
        let (model, inputs) = tiny_model(&c);
        let (k, t) = (c.model.decoder.modes, c.synthetic.future_steps);
        for i in &inputs {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, i).unwrap();
            assert_eq!(out.layers.len(), c.model.decoder.layers);
            for l in &out.layers {
                assert_eq!(tape.shape(l.logits), &[1, k]);
                assert_eq!(tape.shape(l.reg), &[k, t * crate::decoder::REG_CHANNELS]);
            }
            let p = model.predict(i, &c.nms).unwrap();
            assert_eq!(p.selected.modes.len(), c.nms.keep);
            let total: f64 = p.selected.modes.probabilities.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(p.trajectories().iter().all(|m| m.len() == t));
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let c = tiny_config();
        let (model, inputs) = tiny_model(&c);
        let (again, _) = tiny_model(&c);
        for i in &inputs {
            assert_eq!(model.predict(i, &c.nms).unwrap(), again.predict(i, &c.nms).unwrap());
        }
    }

    #[test]
    fn goal_count_must_match_modes() {
        let c = tiny_config();
        let scenarios = generate_synthetic(c.seed, &c.synthetic).unwrap();
        let goals = cluster_goals(&scenarios, c.model.decoder.modes + 1, 0).unwrap();
        let err = Model::new(&c.model, DataShape::of(&scenarios[0]).unwrap(), goals, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn history_length_is_checked() {
        let c = tiny_config();
        let (model, inputs) = tiny_model(&c);
        let mut other = model.clone();
        other.shape.history_len += 1;
        let mut tape = Tape::new();
        assert!(other.forward(&mut tape, &inputs[0]).is_err());
    }
}
