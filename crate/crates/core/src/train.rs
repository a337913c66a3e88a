//! Seeded training loop, evaluation and intention-goal clustering.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::decoder::{cluster_intention_goals, IntentionGoalSet};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::loss::{total_loss, LossBreakdown};
use crate::metrics::{standard_horizons, EvalReport, EvalSample, MetricSet};
use crate::model::{DataShape, Model, NmsConfig, TargetPrediction};
use crate::numerics::{clip_grad_norm, AdamW, AdamWConfig, Tape, Tensor};
use crate::scene::{AgentType, Scenario};
use crate::tokenizer::TargetInputs;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub aux: f64,
    pub cls: f64,
    pub gmm: f64,
    pub lr: f64,
}

/// Final-step endpoints of every agent with a future, each in its own frame.
pub fn collect_endpoints(scenarios: &[Scenario]) -> BTreeMap<AgentType, Vec<Point2>> {
    let mut out: BTreeMap<AgentType, Vec<Point2>> = BTreeMap::new();
    for s in scenarios {
        for a in &s.agents {
            let (Some(future), true) = (&a.future, a.current_valid()) else {
                continue;
            };
            let Some(last) = future.last() else { continue };
            let pose = a.current().pose();
            out.entry(a.agent_type).or_default().push(pose.to_local([last.x, last.y]));
        }
    }
    out
}

/// Clusters endpoints per type; a type with fewer than `k` endpoints falls
/// back to the pooled endpoints of all types.
pub fn cluster_goals(scenarios: &[Scenario], k: usize, seed: u64) -> Result<IntentionGoalSet> {
    let mut endpoints = collect_endpoints(scenarios);
    let pooled: Vec<Point2> = endpoints.values().flatten().copied().collect();
    for t in AgentType::ALL {
        let e = endpoints.entry(t).or_default();
        if e.len() < k {
            log::warn!(
                "{} has {} endpoints for {k} goals; clustering the pooled endpoints instead",
                t.name(),
                e.len()
            );
            *e = pooled.clone();
        }
    }
    cluster_intention_goals(&endpoints, k, seed)
}

fn eval_sample(inputs: &TargetInputs, prediction: &TargetPrediction) -> Result<EvalSample> {
    let gt = inputs
        .target_future()
        .ok_or_else(|| Error::Contract(format!("target {} has no ground-truth future", inputs.target_id)))?;
    Ok(EvalSample {
        agent_type: inputs.target_type,
        modes: prediction.trajectories(),
        probabilities: prediction.selected.modes.probabilities.clone(),
        gt: gt.iter().map(|s| [s[0], s[1]]).collect(),
        valid: vec![true; gt.len()],
    })
}

/// Predicts every target with NMS and scores the kept modes.
pub fn evaluate(model: &Model, inputs: &[TargetInputs], nms: &NmsConfig, dt: f64) -> Result<(EvalReport, Vec<TargetPrediction>)> {
    let mut samples = Vec::with_capacity(inputs.len());
    let mut predictions = Vec::with_capacity(inputs.len());
    for i in inputs {
        let p = model.predict(i, nms)?;
        samples.push(eval_sample(i, &p)?);
        predictions.push(p);
    }
    let report = EvalReport::evaluate(&samples, &standard_horizons(model.shape.future_steps, dt))?;
    Ok((report, predictions))
}

/// Loss breakdown of `inputs` without updating the model.
pub fn evaluate_loss(model: &Model, inputs: &[TargetInputs], config: &RunConfig) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    for i in inputs {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, i)?;
        let t = model.loss(&mut tape, i, &out, &config.loss)?;
        let (_, b) = total_loss(&mut tape, &[t], &config.loss)?;
        sum.total += b.total;
        sum.aux += b.aux;
        sum.cls += b.cls;
        sum.gmm += b.gmm;
        sum.best_modes.extend(b.best_modes);
    }
    let n = inputs.len().max(1) as f64;
    sum.total /= n;
    sum.aux /= n;
    sum.cls /= n;
    sum.gmm /= n;
    Ok(sum)
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub samples: Vec<TargetInputs>,
    optimizer: AdamW,
    order_rng: ChaCha8Rng,
    pub step: usize,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig, scenarios: &[Scenario], goals: IntentionGoalSet) -> Result<Self> {
        config.validate()?;
        let first = scenarios
            .first()
            .ok_or_else(|| Error::Contract("no training scenarios".into()))?;
        let model = Model::new(&config.model, DataShape::of(first)?, goals, config.seed)?;
        let samples = model.scenario_inputs(scenarios)?;
        if samples.is_empty() {
            return Err(Error::Contract("training scenarios contain no targets".into()));
        }
        let optimizer = AdamW::new(
            &model.store,
            AdamWConfig {
                weight_decay: config.optimizer.weight_decay,
                betas: config.optimizer.betas,
                eps: config.optimizer.eps,
            },
        );
        Ok(Trainer {
            config: config.clone(),
            model,
            samples,
            optimizer,
            order_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x0BAD_5EED),
            step: 0,
            epoch: 0,
        })
    }

    fn done(&self) -> bool {
        self.epoch >= self.config.training.epochs
            || self.config.training.max_steps.is_some_and(|m| self.step >= m)
    }

    /// One optimizer step on the samples at `batch`. Gradients are
    /// accumulated per target in batch order.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<StepLog> {
        let lr = self.config.optimizer.lr_at(self.epoch);
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Tensor> = self
            .model
            .store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
            .collect();
        let mut log = StepLog {
            step: self.step + 1,
            epoch: self.epoch,
            total: 0.0,
            aux: 0.0,
            cls: 0.0,
            gmm: 0.0,
            lr,
        };
        for &i in batch {
            let inputs = &self.samples[i];
            let mut tape = Tape::new();
            let out = self.model.forward(&mut tape, inputs)?;
            let terms = self.model.loss(&mut tape, inputs, &out, &self.config.loss)?;
            let (loss, b) = total_loss(&mut tape, &[terms], &self.config.loss)?;
            if !b.total.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let g = tape.backward(loss)?.for_params(&tape, &self.model.store);
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, x)| *a += scale * x);
            }
            log.total += scale * b.total;
            log.aux += scale * b.aux;
            log.cls += scale * b.cls;
            log.gmm += scale * b.gmm;
        }
        if let Some(max) = self.config.optimizer.grad_clip {
            clip_grad_norm(&mut grads, max);
        }
        self.optimizer.step(&mut self.model.store, &grads, lr)?;
        self.step += 1;
        Ok(log)
    }

    /// Runs one epoch over a seeded permutation of the samples, stopping early
    /// at `max_steps`.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.order_rng);
        for batch in order.chunks(self.config.training.batch_size) {
            if self.config.training.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            let log = self.train_step(batch)?;
            on_step(&log);
        }
        self.epoch += 1;
        Ok(())
    }

    /// Metrics of the 32-bit rounded model on the first snapshot targets.
    pub fn snapshot(&self) -> Result<Option<MetricSet>> {
        let n = self.config.training.snapshot_targets.min(self.samples.len());
        if n == 0 {
            return Ok(None);
        }
        let rounded = self.model.rounded_to_f32();
        let (report, _) = evaluate(&rounded, &self.samples[..n], &self.config.nms, self.config.synthetic.dt)?;
        Ok(Some(report.average))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_model(
            &self.model,
            &self.config,
            self.epoch,
            self.step,
            self.snapshot()?,
        ))
    }

    /// Trains to completion, handing every step log and every end-of-epoch
    /// checkpoint to the callbacks.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&StepLog),
        mut on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
    ) -> Result<()> {
        while !self.done() {
            self.run_epoch(&mut on_step)?;
            on_epoch(&self.checkpoint()?)?;
        }
        Ok(())
    }
}
