//! Mini-batch Adam on the regularized pointwise log loss with per-epoch
//! negative sampling.

mod adam;
mod gradients;
mod negatives;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradients::{add_l2_gradient, backward, forward, log_loss, loss_and_gradients, sigmoid, BatchOutput, LabeledTriple, SCORE_CLAMP};
pub use negatives::{sample_negatives, NegativeSampler};

use crate::dataset::{AttributedGraph, InteractionLog};
use crate::encoder::VocabSizes;
use crate::error::{GcmError, Result};
use crate::evaluation::evaluate;
use crate::model::{ModelConfig, ModelState, PropagationPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 0.001,
            batch_size: 2048,
            negatives_per_positive: 4,
            l2_lambda: 1e-5,
            epochs: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GcmError::Param(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1".into());
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2_lambda must be non-negative, got {}", self.l2_lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.model.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if !(self.model.init_scale > 0.0 && self.model.init_scale.is_finite()) {
            return bad(format!("init_scale must be positive, got {}", self.model.init_scale));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Regularized loss summed over batches, divided by the instance count.
    pub loss: f64,
    /// Log-loss part only, per instance.
    pub data_loss: f64,
    pub instances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
}

/// Held-out cases scored after selected epochs.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub test: &'a InteractionLog,
    pub ks: &'a [usize],
    /// Evaluate after every `every`-th epoch and after the last one.
    pub every: usize,
}

/// Training state that can stop and resume between epochs.
pub struct Trainer<'g> {
    pub config: TrainConfig,
    pub model: ModelState,
    pub adam: AdamState,
    /// Epochs completed so far.
    pub epoch: usize,
    graph: &'g AttributedGraph,
    plan: PropagationPlan,
    sampler: NegativeSampler,
    positives: Vec<LabeledTriple>,
    adam_config: AdamConfig,
}

impl<'g> Trainer<'g> {
    pub fn new(config: TrainConfig, graph: &'g AttributedGraph) -> Result<Self> {
        config.validate()?;
        let model = ModelState::init(config.model.clone(), VocabSizes::from(&graph.features), config.seed)?;
        let adam = AdamState::new(&model.params);
        Self::resume(config, graph, model, adam, 0)
    }

    /// Continues from a saved model and optimizer state.
    pub fn resume(
        config: TrainConfig,
        graph: &'g AttributedGraph,
        model: ModelState,
        adam: AdamState,
        epoch: usize,
    ) -> Result<Self> {
        config.validate()?;
        if model.config != config.model {
            return Err(GcmError::contract("model state does not match the training config"));
        }
        if VocabSizes::from(&graph.features) != model.params.tables.sizes() {
            return Err(GcmError::contract("model tables do not match the graph vocabularies"));
        }
        let plan = PropagationPlan::new(graph, &config.model)?;
        let positives = (0..graph.edge_count())
            .map(|e| {
                let (u, i) = graph.edge_endpoints(e);
                LabeledTriple::positive(u, i, graph.edge_context(e).to_vec())
            })
            .collect();
        Ok(Trainer {
            sampler: NegativeSampler::from_graph(graph),
            config,
            model,
            adam,
            epoch,
            graph,
            plan,
            positives,
            adam_config: AdamConfig::default(),
        })
    }

    pub fn plan(&self) -> &PropagationPlan {
        &self.plan
    }

    /// Independent stream per epoch so a resumed run draws the same
    /// negatives and order as an uninterrupted one.
    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// Samples negatives, shuffles and runs one pass of mini-batch Adam.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let mut rng = self.epoch_rng(self.epoch);
        let k = self.config.negatives_per_positive;
        let mut instances = Vec::with_capacity(self.positives.len() * (k + 1));
        for pos in &self.positives {
            instances.push(pos.clone());
            instances.extend(self.sampler.sample(pos, k, &mut rng)?);
        }
        instances.shuffle(&mut rng);

        let (mut total, mut data) = (0.0, 0.0);
        for batch in instances.chunks(self.config.batch_size) {
            let (out, grads) = loss_and_gradients(batch, &self.model, &self.plan, self.config.l2_lambda)?;
            total += out.loss();
            data += out.data_loss;
            adam_step(
                &mut self.model.params,
                &grads,
                &mut self.adam,
                self.config.learning_rate,
                &self.adam_config,
            )?;
        }
        if !self.model.params.is_finite() {
            return Err(GcmError::contract(format!(
                "parameters diverged in epoch {}",
                self.epoch + 1
            )));
        }
        self.epoch += 1;
        let n = instances.len().max(1) as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            loss: total / n,
            data_loss: data / n,
            instances: instances.len(),
            validation: None,
        })
    }

    pub fn validate_now(&self, v: &Validation) -> Result<ValidationMetrics> {
        let artifacts = self.model.scoring_artifacts(&self.plan)?;
        let rep = evaluate(v.test, self.graph, &artifacts, v.ks)?;
        Ok(ValidationMetrics {
            ks: rep.ks,
            hr: rep.hr,
            ndcg: rep.ndcg,
        })
    }

    /// Runs until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each.
    pub fn run(
        &mut self,
        validation: Option<&Validation>,
        mut on_epoch: impl FnMut(&EpochMetrics, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let mut m = self.run_epoch()?;
            if let Some(v) = validation {
                let last = self.epoch == self.config.epochs;
                if last || (v.every > 0 && self.epoch % v.every == 0) {
                    m.validation = Some(self.validate_now(v)?);
                }
            }
            on_epoch(&m, self)?;
            history.push(m);
        }
        Ok(history)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub adam: AdamState,
    pub history: Vec<EpochMetrics>,
}

/// Trains a fresh model on the training graph.
pub fn train(config: &TrainConfig, graph: &AttributedGraph) -> Result<TrainOutcome> {
    train_with_validation(config, graph, None)
}

pub fn train_with_validation(
    config: &TrainConfig,
    graph: &AttributedGraph,
    validation: Option<&Validation>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config.clone(), graph)?;
    let history = t.run(validation, |_, _| Ok(()))?;
    Ok(TrainOutcome {
        model: t.model,
        adam: t.adam,
        history,
    })
}
