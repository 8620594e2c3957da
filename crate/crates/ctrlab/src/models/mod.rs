//! Prediction models: logistic regression, the wide-and-deep network, and the
//! exponential delay-rate model, plus gradient accumulation and parameter
//! (de)serialization hooks shared by the trainer, checkpoints, and tests.
//!
//! All models expose logits; callers apply the sigmoid where a probability is
//! needed. Prediction is pure; mutation happens only through
//! [`Model::apply_gradients`] / [`Model::shrink_weights`].

mod checkpoint;
mod wide_deep;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, snapshot_file_name, Checkpoint, CheckpointError,
};
pub use wide_deep::{
    cross_product_transform, EmbedCombine, WideDeepConfig, WideDeepForward, WideDeepGradients,
    WideDeepModel,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CoreError, SparseVector};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("model configuration: {0}")]
    Config(String),
    #[error("unknown model {0:?}; expected logistic or wide_deep")]
    UnknownName(String),
    #[error("parameter array {name:?} has length {got}, expected {expected}")]
    ArrayShape { name: String, got: usize, expected: usize },
    #[error("unknown parameter array {0:?}")]
    UnknownArray(String),
}

/// Model vocabulary exposed to configuration and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    WideDeep,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Logistic, ModelKind::WideDeep];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::WideDeep => "wide_deep",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "wide_deep" => Ok(ModelKind::WideDeep),
            other => Err(ModelError::UnknownName(other.to_string())),
        }
    }
}

/// Samples `n` values from the Glorot-uniform scheme with bound
/// sqrt(6 / (fan_in + fan_out)).
pub(crate) fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Plain logistic regression over the sparse feature space:
/// logit = w . x + bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    weights: Vec<f64>,
    bias: f64,
}

impl LogisticModel {
    /// Zero initialization: the canonical start for a convex problem, and it
    /// predicts probability 0.5 everywhere.
    pub fn new(dim: usize) -> Self {
        Self { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn predict_logit(&self, x: &SparseVector) -> Result<f64, ModelError> {
        Ok(x.dot(&self.weights)? + self.bias)
    }
}

/// Exponential delay-rate model: lambda(x) = exp(w_d . x).
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    weights: Vec<f64>,
}

/// Largest delay logit before exp overflows f64; rates saturate here.
const MAX_DELAY_LOGIT: f64 = 709.0;

impl DelayModel {
    pub fn new(dim: usize) -> Self {
        Self { weights: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The linear term w_d . x; the rate is its exp.
    pub fn predict_delay_logit(&self, x: &SparseVector) -> Result<f64, ModelError> {
        Ok(x.dot(&self.weights)?)
    }

    /// Strictly positive rate lambda = exp(w_d . x), saturating (with a
    /// warning) instead of overflowing to infinity.
    pub fn predict_delay_rate(&self, x: &SparseVector) -> Result<f64, ModelError> {
        let dl = self.predict_delay_logit(x)?;
        if dl > MAX_DELAY_LOGIT {
            log::warn!("delay logit {dl} exceeds exp range; saturating rate");
            return Ok(MAX_DELAY_LOGIT.exp());
        }
        Ok(dl.exp())
    }

    pub fn accumulate_gradient(
        &self,
        x: &SparseVector,
        d_delay_logit: f64,
        grads: &mut BTreeMap<u32, f64>,
    ) {
        for &(id, v) in x.entries() {
            *grads.entry(id).or_insert(0.0) += d_delay_logit * v;
        }
    }

    /// weights[id] -= step * grad[id]
    pub fn apply_gradients(&mut self, grads: &BTreeMap<u32, f64>, step: f64) {
        for (&id, &g) in grads {
            self.weights[id as usize] -= step * g;
        }
    }

    /// Multiplies every parameter by `factor` (the trainer's L2 step).
    pub fn scale_params(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.weights.clone()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.weights.len() {
            return Err(ModelError::ArrayShape {
                name: "delay_weights".into(),
                got: params.len(),
                expected: self.weights.len(),
            });
        }
        self.weights.copy_from_slice(params);
        Ok(())
    }
}

/// A prediction model of either kind, as held by the trainer and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Logistic(LogisticModel),
    WideDeep(WideDeepModel),
}

/// Cached forward-pass state, consumed by gradient accumulation.
#[derive(Debug, Clone)]
pub enum Forward {
    Logistic { logit: f64 },
    WideDeep(WideDeepForward),
}

impl Forward {
    pub fn logit(&self) -> f64 {
        match self {
            Forward::Logistic { logit } => *logit,
            Forward::WideDeep(f) => f.logit,
        }
    }
}

/// Gradient accumulator matching a model's parameter structure. Sparse parts
/// use ordered maps so accumulation and application are deterministic.
#[derive(Debug, Clone)]
pub enum ModelGradients {
    Logistic { weights: BTreeMap<u32, f64>, bias: f64 },
    WideDeep(WideDeepGradients),
}

impl Model {
    pub fn new_logistic(dim: usize) -> Self {
        Model::Logistic(LogisticModel::new(dim))
    }

    pub fn init_wide_deep<R: Rng>(config: WideDeepConfig, rng: &mut R) -> Result<Self, ModelError> {
        Ok(Model::WideDeep(WideDeepModel::init(config, rng)?))
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Logistic(_) => ModelKind::Logistic,
            Model::WideDeep(_) => ModelKind::WideDeep,
        }
    }

    pub fn forward(&self, x: &SparseVector) -> Result<Forward, ModelError> {
        match self {
            Model::Logistic(m) => Ok(Forward::Logistic { logit: m.predict_logit(x)? }),
            Model::WideDeep(m) => Ok(Forward::WideDeep(m.forward(x)?)),
        }
    }

    pub fn predict_logit(&self, x: &SparseVector) -> Result<f64, ModelError> {
        Ok(self.forward(x)?.logit())
    }

    pub fn new_gradients(&self) -> ModelGradients {
        match self {
            Model::Logistic(_) => {
                ModelGradients::Logistic { weights: BTreeMap::new(), bias: 0.0 }
            }
            Model::WideDeep(m) => ModelGradients::WideDeep(m.new_gradients()),
        }
    }

    /// Adds d(loss)/d(params) for one example, given d(loss)/d(logit).
    pub fn accumulate_gradient(
        &self,
        x: &SparseVector,
        forward: &Forward,
        d_logit: f64,
        grads: &mut ModelGradients,
    ) -> Result<(), ModelError> {
        match (self, forward, grads) {
            (Model::Logistic(_), Forward::Logistic { .. }, ModelGradients::Logistic { weights, bias }) => {
                for &(id, v) in x.entries() {
                    *weights.entry(id).or_insert(0.0) += d_logit * v;
                }
                *bias += d_logit;
                Ok(())
            }
            (Model::WideDeep(m), Forward::WideDeep(f), ModelGradients::WideDeep(g)) => {
                m.accumulate_gradient(x, f, d_logit, g);
                Ok(())
            }
            _ => Err(ModelError::Config("forward/gradient kind does not match model".into())),
        }
    }

    /// params -= step * grads
    pub fn apply_gradients(&mut self, grads: &ModelGradients, step: f64) -> Result<(), ModelError> {
        match (self, grads) {
            (Model::Logistic(m), ModelGradients::Logistic { weights, bias }) => {
                for (&id, &g) in weights {
                    m.weights[id as usize] -= step * g;
                }
                m.bias -= step * bias;
                Ok(())
            }
            (Model::WideDeep(m), ModelGradients::WideDeep(g)) => {
                m.apply_gradients(g, step);
                Ok(())
            }
            _ => Err(ModelError::Config("gradient kind does not match model".into())),
        }
    }

    /// Multiplies every parameter by `factor`; the trainer's L2 step.
    pub fn scale_params(&mut self, factor: f64) {
        match self {
            Model::Logistic(m) => {
                for w in &mut m.weights {
                    *w *= factor;
                }
                m.bias *= factor;
            }
            Model::WideDeep(m) => m.scale_params(factor),
        }
    }

    /// Width of the raw (un-crossed) feature space the model consumes.
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Logistic(m) => m.dim(),
            Model::WideDeep(m) => m.config().input_dim(),
        }
    }

    pub fn params_finite(&self) -> bool {
        match self {
            Model::Logistic(m) => m.weights.iter().all(|w| w.is_finite()) && m.bias.is_finite(),
            Model::WideDeep(m) => m.params_finite(),
        }
    }

    /// All parameters flattened in a fixed documented order; inverse of
    /// [`Model::set_params_flat`]. Used by finite-difference checks.
    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            Model::Logistic(m) => {
                let mut out = m.weights.clone();
                out.push(m.bias);
                out
            }
            Model::WideDeep(m) => m.params_flat(),
        }
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<(), ModelError> {
        match self {
            Model::Logistic(m) => {
                let expected = m.weights.len() + 1;
                if params.len() != expected {
                    return Err(ModelError::ArrayShape {
                        name: "logistic".into(),
                        got: params.len(),
                        expected,
                    });
                }
                m.weights.copy_from_slice(&params[..params.len() - 1]);
                m.bias = params[params.len() - 1];
                Ok(())
            }
            Model::WideDeep(m) => m.set_params_flat(params),
        }
    }

    /// Gradients flattened densely in the same order as [`Model::params_flat`].
    pub fn gradients_flat(&self, grads: &ModelGradients) -> Result<Vec<f64>, ModelError> {
        match (self, grads) {
            (Model::Logistic(m), ModelGradients::Logistic { weights, bias }) => {
                let mut out = vec![0.0; m.weights.len() + 1];
                for (&id, &g) in weights {
                    out[id as usize] = g;
                }
                *out.last_mut().unwrap() = *bias;
                Ok(out)
            }
            (Model::WideDeep(m), ModelGradients::WideDeep(g)) => Ok(m.gradients_flat(g)),
            _ => Err(ModelError::Config("gradient kind does not match model".into())),
        }
    }

    /// Named parameter arrays in checkpoint order (scalars as length-1
    /// arrays). Paired with [`Model::set_named_array`].
    pub fn named_arrays(&self) -> Vec<(String, Vec<f64>)> {
        match self {
            Model::Logistic(m) => vec![
                ("weights".to_string(), m.weights.clone()),
                ("bias".to_string(), vec![m.bias]),
            ],
            Model::WideDeep(m) => m.named_arrays(),
        }
    }

    pub fn set_named_array(&mut self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        let shape_err = |got: usize, expected: usize| ModelError::ArrayShape {
            name: name.to_string(),
            got,
            expected,
        };
        match self {
            Model::Logistic(m) => match name {
                "weights" => {
                    if values.len() != m.weights.len() {
                        return Err(shape_err(values.len(), m.weights.len()));
                    }
                    m.weights.copy_from_slice(values);
                    Ok(())
                }
                "bias" => {
                    if values.len() != 1 {
                        return Err(shape_err(values.len(), 1));
                    }
                    m.bias = values[0];
                    Ok(())
                }
                other => Err(ModelError::UnknownArray(other.to_string())),
            },
            Model::WideDeep(m) => m.set_named_array(name, values),
        }
    }
}
