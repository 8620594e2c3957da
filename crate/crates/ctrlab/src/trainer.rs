//! SGD training in two modes: offline (multi-epoch, shuffled batches) and
//! continuous (single pass in event order, emitting versioned snapshots).
//!
//! The trainer is the single writer of model parameters. Every step checks
//! loss values, gradients, and resulting parameters for finiteness and
//! aborts with a structured divergence error instead of training on garbage.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::losses::{compute, LossError, LossInput, LossKind};
use crate::models::{Checkpoint, DelayModel, Model, ModelError};
use crate::stream::StreamEvent;
use crate::types::{CoreError, Hyperparams, ModelSnapshot, TrainingExample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },
    #[error("trainer contract: {0}")]
    Contract(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Parameters carried by an emitted snapshot.
#[derive(Debug, Clone)]
pub struct TrainedParams {
    pub model: Model,
    pub delay: Option<DelayModel>,
    pub loss: LossKind,
}

pub type TrainerSnapshot = ModelSnapshot<TrainedParams>;

/// Mutable optimization state: the model (plus delay model under the delayed
/// feedback loss), the step counter, and the shuffle RNG.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub model: Model,
    pub delay_model: Option<DelayModel>,
    pub loss: LossKind,
    pub hyper: Hyperparams,
    /// Completed SGD steps.
    pub step: u64,
    /// Floors each PU batch risk at zero: a batch whose summed PU value is
    /// negative applies no update. Off by default; the raw estimator's
    /// instability is part of the observable behavior.
    pub pu_risk_floor: bool,
    rng: ChaCha8Rng,
    next_snapshot_version: u64,
}

impl TrainerState {
    pub fn new(model: Model, loss: LossKind, hyper: Hyperparams) -> Result<Self, TrainError> {
        hyper.validate().map_err(|e| TrainError::Contract(e.to_string()))?;
        let delay_model = loss.requires_delay_model().then(|| DelayModel::new(model.input_dim()));
        let rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        Ok(Self {
            model,
            delay_model,
            loss,
            hyper,
            step: 0,
            pu_risk_floor: false,
            rng,
            next_snapshot_version: 0,
        })
    }

    /// Learning rate for the upcoming step: eta_0 / (1 + decay * step),
    /// where eta_0 is the loss-specific base rate.
    fn learning_rate(&self) -> f64 {
        let base = if self.loss.requires_delay_model() {
            self.hyper.df_learning_rate
        } else {
            self.hyper.learning_rate
        };
        base / (1.0 + self.hyper.decay * self.step as f64)
    }

    /// One SGD step on a batch: mean per-example gradient, inverse-time
    /// decayed learning rate, and (for the delayed feedback loss) the L2
    /// gradient 2*alpha*params on both parameter blocks. Returns the mean
    /// per-example loss value. Increments the step counter.
    pub fn sgd_step(&mut self, batch: &[TrainingExample]) -> Result<f64, TrainError> {
        let refs: Vec<&TrainingExample> = batch.iter().collect();
        self.sgd_step_refs(&refs)
    }

    fn sgd_step_refs(&mut self, batch: &[&TrainingExample]) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::Contract("sgd_step on an empty batch".into()));
        }
        let mut grads = self.model.new_gradients();
        let mut delay_grads: BTreeMap<u32, f64> = BTreeMap::new();
        let mut total_value = 0.0;

        for ex in batch {
            let fwd = self.model.forward(&ex.features)?;
            let delay_logit = match &self.delay_model {
                Some(dm) => Some(dm.predict_delay_logit(&ex.features)?),
                None => None,
            };
            let out = compute(self.loss, &LossInput::from_example(ex, fwd.logit(), delay_logit))?;
            if !(out.value.is_finite() && out.d_logit.is_finite() && out.d_delay_logit.is_finite())
            {
                return Err(TrainError::Diverged {
                    step: self.step,
                    what: format!(
                        "non-finite loss (value {}, d_logit {}, d_delay_logit {})",
                        out.value, out.d_logit, out.d_delay_logit
                    ),
                });
            }
            total_value += out.value;
            self.model.accumulate_gradient(&ex.features, &fwd, out.d_logit, &mut grads)?;
            if let Some(dm) = &self.delay_model {
                dm.accumulate_gradient(&ex.features, out.d_delay_logit, &mut delay_grads);
            }
        }

        let eta = self.learning_rate();
        let skip_update = self.pu_risk_floor && self.loss == LossKind::Pu && total_value < 0.0;
        if !skip_update {
            if self.loss.requires_delay_model() && self.hyper.df_l2_alpha > 0.0 {
                // params -= eta * 2 alpha * params, using pre-update params —
                // the batch gradients above were already computed from them.
                let factor = 1.0 - 2.0 * self.hyper.df_l2_alpha * eta;
                self.model.scale_params(factor);
                if let Some(dm) = &mut self.delay_model {
                    dm.scale_params(factor);
                }
            }
            let scale = eta / batch.len() as f64;
            self.model.apply_gradients(&grads, scale)?;
            if let Some(dm) = &mut self.delay_model {
                dm.apply_gradients(&delay_grads, scale);
            }
        }
        self.step += 1;

        let finite = self.model.params_finite()
            && self.delay_model.as_ref().map_or(true, |dm| dm.params_finite());
        if !finite {
            return Err(TrainError::Diverged {
                step: self.step,
                what: "non-finite parameter after update".into(),
            });
        }
        Ok(total_value / batch.len() as f64)
    }

    /// Multi-epoch training: each epoch shuffles the dataset (driven by the
    /// seeded trainer RNG) and walks it in batches of `batch_size`. Returns
    /// the mean per-example loss of each epoch.
    pub fn train_offline(
        &mut self,
        dataset: &[TrainingExample],
        epochs: usize,
    ) -> Result<Vec<f64>, TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::Contract("train_offline on an empty dataset".into()));
        }
        let mut epoch_losses = Vec::with_capacity(epochs);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut self.rng);
            let mut weighted = 0.0;
            for chunk in order.chunks(self.hyper.batch_size) {
                let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &dataset[i]).collect();
                let mean = self.sgd_step_refs(&batch)?;
                weighted += mean * batch.len() as f64;
            }
            epoch_losses.push(weighted / dataset.len() as f64);
        }
        Ok(epoch_losses)
    }

    /// Single-pass training in event order: consecutive events form
    /// micro-batches (the stream's own ordering is the curriculum), and every
    /// `snapshot_every` steps an immutable snapshot with an increasing
    /// version is handed to `sink`. A final short batch trains on whatever
    /// remains.
    pub fn train_continuous<F>(
        &mut self,
        stream: &[StreamEvent],
        snapshot_every: u64,
        mut sink: F,
    ) -> Result<Vec<u64>, TrainError>
    where
        F: FnMut(&TrainerSnapshot) -> Result<(), TrainError>,
    {
        if snapshot_every == 0 {
            return Err(TrainError::Contract("snapshot_every must be positive".into()));
        }
        for (i, pair) in stream.windows(2).enumerate() {
            if pair[1].emit_time < pair[0].emit_time {
                return Err(TrainError::Contract(format!(
                    "stream not ordered by emit_time at event {}",
                    i + 1
                )));
            }
        }
        let mut versions = Vec::new();
        let mut steps_since_snapshot = 0u64;
        for chunk in stream.chunks(self.hyper.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|ev| &ev.example).collect();
            self.sgd_step_refs(&batch)?;
            steps_since_snapshot += 1;
            if steps_since_snapshot == snapshot_every {
                steps_since_snapshot = 0;
                let snapshot = self.snapshot();
                versions.push(snapshot.version);
                sink(&snapshot)?;
            }
        }
        Ok(versions)
    }

    /// Clones the current parameters into an immutable snapshot with the
    /// next version number.
    pub fn snapshot(&mut self) -> TrainerSnapshot {
        self.next_snapshot_version += 1;
        ModelSnapshot {
            version: self.next_snapshot_version,
            step: self.step,
            params: TrainedParams {
                model: self.model.clone(),
                delay: self.delay_model.clone(),
                loss: self.loss,
            },
        }
    }

    /// The current state as a checkpoint (for persisting outside the
    /// snapshot cadence, e.g. after offline training).
    pub fn to_checkpoint(&self, version: u64) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            delay: self.delay_model.clone(),
            loss: self.loss,
            calibrated: self.loss.calibrates_predictions(),
            version,
            step: self.step,
        }
    }
}

/// Converts an emitted snapshot into a persistable checkpoint.
impl From<&TrainerSnapshot> for Checkpoint {
    fn from(s: &TrainerSnapshot) -> Self {
        Checkpoint {
            model: s.params.model.clone(),
            delay: s.params.delay.clone(),
            loss: s.params.loss,
            calibrated: s.params.loss.calibrates_predictions(),
            version: s.version,
            step: s.step,
        }
    }
}
