//! Event-stream construction: synthetic impression generation against known
//! ground truth, the fake-negative stream transform, snapshot labeling with
//! an attribution window, and negative downsampling.
//!
//! Everything here is deterministic: all randomness flows from an explicit
//! 64-bit seed, and transforms are pure functions over ordered sequences.

mod criteo;

pub use criteo::{
    derive_criteo_fn_dataset, format_criteo_line, parse_criteo_line, CriteoFeaturizer,
    CriteoRecord, CriteoSchema,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureLayout;
use crate::math::sigmoid;
use crate::types::{CoreError, ImpressionEvent, SparseVector, TrainingExample};

/// Default attribution window: engagements later than 9 hours after the
/// impression never count as positives.
pub const DEFAULT_ATTRIBUTION_WINDOW: f64 = 32_400.0;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("stream configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// One categorical field of the synthetic feature space: exactly one of
/// `cardinality` values is active per impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub cardinality: u32,
    /// Sampling weights over the values; empty means uniform.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
}

/// Categorical-field layout of generated impressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGenSpec {
    pub fields: Vec<FieldSpec>,
}

impl FeatureGenSpec {
    pub fn input_dim(&self) -> usize {
        self.fields.iter().map(|f| f.cardinality as usize).sum()
    }

    pub fn layout(&self) -> Result<FeatureLayout, StreamError> {
        let cards: Vec<(String, u32)> =
            self.fields.iter().map(|f| (f.name.clone(), f.cardinality)).collect();
        FeatureLayout::from_cardinalities(&cards, self.input_dim())
            .ok_or_else(|| StreamError::Config("degenerate feature spec (zero cardinality)".into()))
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.fields.is_empty() {
            return Err(StreamError::Config("feature spec has no fields".into()));
        }
        for f in &self.fields {
            if f.cardinality == 0 {
                return Err(StreamError::Config(format!("field {:?} has cardinality 0", f.name)));
            }
            if !f.weights.is_empty() {
                if f.weights.len() != f.cardinality as usize {
                    return Err(StreamError::Config(format!(
                        "field {:?}: {} weights for cardinality {}",
                        f.name,
                        f.weights.len(),
                        f.cardinality
                    )));
                }
                if f.weights.iter().any(|&w| !(w.is_finite() && w >= 0.0))
                    || f.weights.iter().sum::<f64>() <= 0.0
                {
                    return Err(StreamError::Config(format!(
                        "field {:?}: weights must be non-negative with positive sum",
                        f.name
                    )));
                }
            }
        }
        self.layout()?;
        Ok(())
    }
}

/// The simulator's hidden truth: logistic conversion probability
/// p*(x) = sigmoid(w_star . x) and exponential delay rate
/// lambda*(x) = exp(w_d_star . x) over a categorical feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub w_star: Vec<f64>,
    pub w_d_star: Vec<f64>,
    pub feature_gen: FeatureGenSpec,
    /// Impressions arrive uniformly over [0, horizon] seconds.
    pub horizon: f64,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), StreamError> {
        self.feature_gen.validate()?;
        let dim = self.feature_gen.input_dim();
        if self.w_star.len() != dim {
            return Err(StreamError::Config(format!(
                "w_star has {} weights for feature dimension {dim}",
                self.w_star.len()
            )));
        }
        if self.w_d_star.len() != dim {
            return Err(StreamError::Config(format!(
                "w_d_star has {} weights for feature dimension {dim}",
                self.w_d_star.len()
            )));
        }
        if !self.w_star.iter().chain(&self.w_d_star).all(|w| w.is_finite()) {
            return Err(StreamError::Config("ground-truth weights must be finite".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(StreamError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    /// True conversion probability for a feature pattern.
    pub fn true_ctr(&self, x: &SparseVector) -> Result<f64, StreamError> {
        Ok(sigmoid(x.dot(&self.w_star)?))
    }

    /// True delay rate for a feature pattern.
    pub fn true_rate(&self, x: &SparseVector) -> Result<f64, StreamError> {
        Ok(x.dot(&self.w_d_star)?.exp())
    }
}

/// Samples one value index from a field's distribution.
fn sample_field<R: Rng>(field: &FieldSpec, rng: &mut R) -> u32 {
    if field.weights.is_empty() {
        return rng.random_range(0..field.cardinality);
    }
    let total: f64 = field.weights.iter().sum();
    let mut target = rng.random_range(0.0..total);
    for (i, &w) in field.weights.iter().enumerate() {
        target -= w;
        if target < 0.0 {
            return i as u32;
        }
    }
    field.cardinality - 1
}

/// Generates `n` impressions with hidden conversion outcomes, sorted by
/// impression time. Identical (ground truth, n, seed) triples give identical
/// output.
pub fn gen_synthetic(
    gt: &GroundTruth,
    n: usize,
    seed: u64,
) -> Result<Vec<ImpressionEvent>, StreamError> {
    gt.validate()?;
    if n == 0 {
        return Err(StreamError::Config("impression count must be positive".into()));
    }
    let layout = gt.feature_gen.layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for id in 0..n {
        let t = rng.random_range(0.0..gt.horizon);
        let mut entries = Vec::with_capacity(gt.feature_gen.fields.len());
        for field in &gt.feature_gen.fields {
            let value = sample_field(field, &mut rng);
            let block = layout.block(&field.name).expect("validated layout");
            entries.push((block.start + value, 1.0));
        }
        let x = SparseVector::new(entries)?;
        let p = gt.true_ctr(&x)?;
        let converts = rng.random_bool(p);
        let delay = if converts {
            let rate = gt.true_rate(&x)?;
            let exp = Exp::new(rate)
                .map_err(|e| StreamError::Config(format!("bad delay rate {rate}: {e}")))?;
            // An exact zero draw has measure zero but would violate the
            // strictly-positive delay invariant.
            Some(exp.sample(&mut rng).max(f64::MIN_POSITIVE))
        } else {
            None
        };
        out.push(ImpressionEvent::new(id as u64, t, x, converts, delay)?);
    }
    out.sort_by(|a, b| {
        a.impression_time
            .total_cmp(&b.impression_time)
            .then(a.impression_id.cmp(&b.impression_id))
    });
    Ok(out)
}

/// One labeled example as it enters a continuous-training pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub emit_time: f64,
    pub impression_id: u64,
    pub example: TrainingExample,
}

impl StreamEvent {
    /// `emit_time \t impression_id \t <canonical example line>`.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.emit_time, self.impression_id, self.example.to_line())
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, CoreError> {
        let err = |msg: String| CoreError::Parse { line: line_no, msg };
        let mut parts = line.splitn(3, '\t');
        let emit_time: f64 = parts
            .next()
            .ok_or_else(|| err("empty line".into()))?
            .parse()
            .map_err(|e| err(format!("bad emit_time: {e}")))?;
        let impression_id: u64 = parts
            .next()
            .ok_or_else(|| err("missing impression_id".into()))?
            .parse()
            .map_err(|e| err(format!("bad impression_id: {e}")))?;
        let example =
            TrainingExample::parse_line(parts.next().ok_or_else(|| err("missing example".into()))?, line_no)?;
        Ok(Self { emit_time, impression_id, example })
    }
}

/// The continuous-training label stream: every impression enters immediately
/// as a negative, and converting impressions are duplicated with a positive
/// label when the engagement arrives. Output is ordered by
/// (emit_time, impression_id, label).
pub fn to_fake_negative_stream(impressions: &[ImpressionEvent]) -> Vec<StreamEvent> {
    let mut events = Vec::with_capacity(impressions.len() * 2);
    for imp in impressions {
        events.push(StreamEvent {
            emit_time: imp.impression_time,
            impression_id: imp.impression_id,
            example: TrainingExample {
                features: imp.features.clone(),
                label: false,
                weight: 1.0,
                elapsed: Some(0.0),
                time_to_click: None,
            },
        });
        if let Some(delay) = imp.delay {
            events.push(StreamEvent {
                emit_time: imp.impression_time + delay,
                impression_id: imp.impression_id,
                example: TrainingExample {
                    features: imp.features.clone(),
                    label: true,
                    weight: 1.0,
                    elapsed: Some(delay),
                    time_to_click: Some(delay),
                },
            });
        }
    }
    events.sort_by(|a, b| {
        a.emit_time
            .total_cmp(&b.emit_time)
            .then(a.impression_id.cmp(&b.impression_id))
            .then(a.example.label.cmp(&b.example.label))
    });
    events
}

/// Labels impressions as of a snapshot instant: positive iff the engagement
/// happened before the snapshot and within the attribution window.
/// Impressions after the snapshot are not part of the dataset.
pub fn snapshot_label(
    impressions: &[ImpressionEvent],
    snapshot_time: f64,
    window: f64,
) -> Vec<TrainingExample> {
    impressions
        .iter()
        .filter(|imp| imp.impression_time <= snapshot_time)
        .map(|imp| {
            let observed = imp
                .delay
                .map(|d| imp.impression_time + d <= snapshot_time && d <= window)
                .unwrap_or(false);
            TrainingExample {
                features: imp.features.clone(),
                label: observed,
                weight: 1.0,
                elapsed: Some(snapshot_time - imp.impression_time),
                time_to_click: if observed { imp.delay } else { None },
            }
        })
        .collect()
}

/// Keeps each negative independently with probability `rate` and scales its
/// weight by 1/rate so weighted counts stay unbiased; positives pass through
/// untouched.
pub fn downsample_negatives(
    examples: &[TrainingExample],
    rate: f64,
    seed: u64,
) -> Result<Vec<TrainingExample>, StreamError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(StreamError::Config(format!("downsample rate must be in (0, 1], got {rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.label {
            out.push(ex.clone());
        } else if rng.random_bool(rate) {
            let mut kept = ex.clone();
            kept.weight /= rate;
            out.push(kept);
        }
    }
    Ok(out)
}
