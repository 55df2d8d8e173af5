use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::loss::LossBreakdown;
use super::network::{build_model, Mode, Model};
use super::optim::Adam;
use super::schedule::learning_rate;
use crate::data::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::tensor::Graph;
use crate::vq::Branch;

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based optimizer step.
    pub step: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<StepRecord>,
}

/// Owns the model, optimizer state and RNG streams for one training run.
///
/// Utterances are put in `utterance_id` order before shuffling, so the run
/// does not depend on the order of the input dataset.
pub struct Trainer<'a> {
    model: Model,
    utterances: Vec<&'a Utterance>,
    adam: Adam,
    order: Vec<usize>,
    cursor: usize,
    shuffle_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// `init` supplies starting parameters (for example a previous run whose
    /// decoder is then frozen); all other settings come from `cfg`.
    pub fn new(cfg: &ModelConfig, data: &'a Dataset, init: Option<&Model>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Validation("training needs a non-empty dataset".into()));
        }
        data.validate()?;
        if data.feature_dim() != Some(cfg.feature_dim) {
            return Err(Error::dim(format!(
                "dataset feature_dim {:?}, config {}",
                data.feature_dim(),
                cfg.feature_dim
            )));
        }
        let model = match init {
            None => build_model(cfg)?,
            Some(m) => {
                let fresh = build_model(cfg)?;
                let same_shapes = fresh
                    .named_tensors()
                    .iter()
                    .zip(m.named_tensors())
                    .all(|((_, a), (_, b))| a.shape() == b.shape());
                if !same_shapes {
                    return Err(Error::dim("initial model does not match the config's layer sizes"));
                }
                Model {
                    config: cfg.clone(),
                    ..m.clone()
                }
            }
        };
        let mut utterances: Vec<&Utterance> = data.utterances.iter().collect();
        utterances.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(NOISE_STREAM);
        Ok(Self {
            model,
            order: Vec::new(),
            cursor: 0,
            utterances,
            adam: Adam::new(),
            shuffle_rng,
            noise_rng,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<&'a Utterance> {
        if self.cursor >= self.order.len() {
            self.order = (0..self.utterances.len()).collect();
            self.order.shuffle(&mut self.shuffle_rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.model.config.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].iter().map(|&i| self.utterances[i]).collect();
        self.cursor = end;
        batch
    }

    /// One forward/backward pass and Adam update.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.step >= self.model.config.total_steps {
            return Err(Error::contract(format!(
                "all {} steps already taken",
                self.model.config.total_steps
            )));
        }
        let step = self.step + 1;
        let lr = learning_rate(step, &self.model.config)?;
        let batch = self.next_batch();

        let mut graph = Graph::new();
        let bound = self.model.bind(&mut graph, true);
        let fwd = self.model.forward(
            &mut graph,
            &bound,
            &batch,
            Mode::Train {
                noise: &mut self.noise_rng,
            },
        )?;
        let nodes = self.model.loss(&mut graph, &fwd, &batch)?;
        let loss = nodes.read(&graph)?;
        if let Some(term) = loss.first_non_finite() {
            return Err(Error::Divergence {
                step,
                term: term.to_string(),
            });
        }
        let grads = graph.backward(nodes.total)?;

        let slots: Vec<_> = bound
            .params
            .iter()
            .chain([&bound.speaker_codebook, &bound.accent_codebook])
            .map(|&id| grads.get(id).map(<[f64]>::to_vec))
            .collect();
        if slots.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                step,
                term: "gradient".into(),
            });
        }

        for branch in Branch::ALL {
            if let Some(q) = &fwd.branch(branch).quantized {
                let book = self.model.codebook_mut(branch);
                for &i in &q.indices {
                    book.record_usage(i);
                }
            }
        }

        let mut tensors = self.model.trainable_tensors_mut();
        let grad_refs: Vec<Option<&[f64]>> = tensors
            .iter()
            .zip(&slots)
            .map(|((trainable, _), g)| if *trainable { g.as_deref() } else { None })
            .collect();
        let mut values: Vec<&mut [f64]> = tensors.iter_mut().map(|(_, t)| t.values_mut()).collect();
        self.adam.step(lr, &mut values, &grad_refs)?;

        self.step = step;
        Ok(StepRecord {
            step,
            learning_rate: lr,
            loss,
        })
    }

    /// Runs the remaining steps.
    pub fn run(mut self) -> Result<TrainedModel> {
        let mut history = Vec::with_capacity(self.model.config.total_steps - self.step);
        while self.step < self.model.config.total_steps {
            history.push(self.step()?);
        }
        Ok(TrainedModel {
            model: self.model,
            history,
        })
    }
}

/// Trains a fresh model for `cfg.total_steps` steps.
pub fn train(cfg: &ModelConfig, data: &Dataset) -> Result<TrainedModel> {
    Trainer::new(cfg, data, None)?.run()
}

/// Like [`train`], starting from the parameters of `init`.
pub fn train_from(cfg: &ModelConfig, data: &Dataset, init: &Model) -> Result<TrainedModel> {
    Trainer::new(cfg, data, Some(init))?.run()
}
