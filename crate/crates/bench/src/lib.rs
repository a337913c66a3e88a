//! Shared fixtures for the benchmarks.

use mgtr_core::config::RunConfig;
use mgtr_core::model::{DataShape, Model};
use mgtr_core::scene::{generate_synthetic, Scenario};
use mgtr_core::tokenizer::TargetInputs;
use mgtr_core::train::cluster_goals;

pub struct Fixture {
    pub config: RunConfig,
    pub scenarios: Vec<Scenario>,
    pub model: Model,
    pub inputs: Vec<TargetInputs>,
}

/// Desk-profile model over a handful of synthetic scenarios.
pub fn desk_fixture(scenarios: usize) -> Fixture {
    let mut config = RunConfig::desk();
    config.synthetic.num_scenarios = scenarios;
    let scenarios = generate_synthetic(config.seed, &config.synthetic).expect("synthetic data");
    let goals = cluster_goals(&scenarios, config.model.decoder.modes, config.seed).expect("goals");
    let shape = DataShape::of(&scenarios[0]).expect("shape");
    let model = Model::new(&config.model, shape, goals, config.seed).expect("model");
    let inputs = model.scenario_inputs(&scenarios).expect("inputs");
    Fixture {
        config,
        scenarios,
        model,
        inputs,
    }
}
