//! Domain types shared by every stage of the lab: sparse features, impression
//! events with hidden ground truth, observed training examples, snapshots and
//! hyperparameters.
//!
//! All types are immutable values after construction and safe to share across
//! threads. Times are always seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("feature id {id} out of range for dimension {dim}")]
    FeatureIdOutOfRange { id: u32, dim: usize },
    #[error("non-finite feature value for id {id}")]
    NonFiniteValue { id: u32 },
    #[error("invalid training example: {0}")]
    InvalidExample(String),
    #[error("invalid impression: {0}")]
    InvalidImpression(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Sparse feature vector: strictly increasing feature ids paired with finite,
/// non-zero values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Canonicalizes arbitrary input: sorts by id, sums duplicate ids, drops
    /// exact zeros. Non-finite values are rejected.
    pub fn new(mut entries: Vec<(u32, f64)>) -> Result<Self, CoreError> {
        for &(id, v) in &entries {
            if !v.is_finite() {
                return Err(CoreError::NonFiniteValue { id });
            }
        }
        entries.sort_by_key(|&(id, _)| id);
        let mut canon: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            match canon.last_mut() {
                Some(last) if last.0 == id => last.1 += v,
                _ => canon.push((id, v)),
            }
        }
        canon.retain(|&(_, v)| v != 0.0);
        Ok(Self { entries: canon })
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Builds from entries already known to be sorted, unique, finite, non-zero.
    pub(crate) fn from_canonical(entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.iter().all(|&(_, v)| v.is_finite() && v != 0.0));
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_feature_id(&self) -> Option<u32> {
        self.entries.last().map(|&(id, _)| id)
    }

    /// Sparse-dense dot product: sum of value_i * w[feature_id_i].
    pub fn dot(&self, w: &[f64]) -> Result<f64, CoreError> {
        let mut acc = 0.0;
        for &(id, v) in &self.entries {
            let wi = w
                .get(id as usize)
                .ok_or(CoreError::FeatureIdOutOfRange { id, dim: w.len() })?;
            acc += v * wi;
        }
        Ok(acc)
    }
}

/// A served ad impression together with its hidden ground truth: whether a
/// conversion will ever happen and, if so, after what delay.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionEvent {
    pub impression_id: u64,
    /// Seconds, non-negative.
    pub impression_time: f64,
    pub features: SparseVector,
    /// Hidden ground truth: will the user eventually convert?
    pub converts: bool,
    /// Seconds between impression and conversion; present iff `converts`.
    pub delay: Option<f64>,
}

impl ImpressionEvent {
    pub fn new(
        impression_id: u64,
        impression_time: f64,
        features: SparseVector,
        converts: bool,
        delay: Option<f64>,
    ) -> Result<Self, CoreError> {
        if !(impression_time.is_finite() && impression_time >= 0.0) {
            return Err(CoreError::InvalidImpression(format!(
                "impression_time must be finite and non-negative, got {impression_time}"
            )));
        }
        match (converts, delay) {
            (true, Some(d)) if d.is_finite() && d > 0.0 => {}
            (false, None) => {}
            (true, Some(d)) => {
                return Err(CoreError::InvalidImpression(format!(
                    "delay must be finite and positive, got {d}"
                )))
            }
            (true, None) => {
                return Err(CoreError::InvalidImpression(
                    "converting impression requires a delay".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(CoreError::InvalidImpression(
                    "non-converting impression must not carry a delay".into(),
                ))
            }
        }
        Ok(Self { impression_id, impression_time, features, converts, delay })
    }
}

/// An observed (possibly fake-negative) labeled example as seen by a trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: SparseVector,
    /// Observed label; may be a fake negative relative to ground truth.
    pub label: bool,
    /// Sampling-correction weight, strictly positive.
    pub weight: f64,
    /// Seconds elapsed from impression to snapshot/emission time.
    pub elapsed: Option<f64>,
    /// Seconds from impression to the recorded engagement; present only on
    /// positives.
    pub time_to_click: Option<f64>,
}

impl TrainingExample {
    pub fn new(
        features: SparseVector,
        label: bool,
        weight: f64,
        elapsed: Option<f64>,
        time_to_click: Option<f64>,
    ) -> Result<Self, CoreError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(CoreError::InvalidExample(format!(
                "weight must be finite and positive, got {weight}"
            )));
        }
        if let Some(e) = elapsed {
            if !(e.is_finite() && e >= 0.0) {
                return Err(CoreError::InvalidExample(format!(
                    "elapsed must be finite and non-negative, got {e}"
                )));
            }
        }
        if let Some(d) = time_to_click {
            if !label {
                return Err(CoreError::InvalidExample(
                    "time_to_click present on a negative example".into(),
                ));
            }
            if !(d.is_finite() && d > 0.0) {
                return Err(CoreError::InvalidExample(format!(
                    "time_to_click must be finite and positive, got {d}"
                )));
            }
        }
        Ok(Self { features, label, weight, elapsed, time_to_click })
    }

    pub fn label_f64(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }

    /// Canonical one-record-per-line text form: label, weight, elapsed,
    /// time_to_click, then `id:value` pairs, tab-separated. Absent optionals
    /// serialize as empty fields. Floats round-trip exactly.
    pub fn to_line(&self) -> String {
        let mut out = String::new();
        out.push(if self.label { '1' } else { '0' });
        out.push('\t');
        out.push_str(&self.weight.to_string());
        out.push('\t');
        if let Some(e) = self.elapsed {
            out.push_str(&e.to_string());
        }
        out.push('\t');
        if let Some(d) = self.time_to_click {
            out.push_str(&d.to_string());
        }
        for &(id, v) in self.features.entries() {
            out.push('\t');
            out.push_str(&id.to_string());
            out.push(':');
            out.push_str(&v.to_string());
        }
        out
    }

    /// Parses the canonical line format; `line_no` is reported in errors.
    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, CoreError> {
        let err = |msg: String| CoreError::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(err(format!("expected at least 4 fields, got {}", fields.len())));
        }
        let label = match fields[0] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("label must be 0 or 1, got {other:?}"))),
        };
        let weight: f64 =
            fields[1].parse().map_err(|e| err(format!("bad weight {:?}: {e}", fields[1])))?;
        let parse_opt = |s: &str, name: &str| -> Result<Option<f64>, CoreError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| CoreError::Parse { line: line_no, msg: format!("bad {name} {s:?}: {e}") })
            }
        };
        let elapsed = parse_opt(fields[2], "elapsed")?;
        let time_to_click = parse_opt(fields[3], "time_to_click")?;
        let mut entries = Vec::with_capacity(fields.len() - 4);
        for raw in &fields[4..] {
            let (id_s, v_s) = raw
                .split_once(':')
                .ok_or_else(|| err(format!("feature entry {raw:?} is not id:value")))?;
            let id: u32 =
                id_s.parse().map_err(|e| err(format!("bad feature id {id_s:?}: {e}")))?;
            let v: f64 =
                v_s.parse().map_err(|e| err(format!("bad feature value {v_s:?}: {e}")))?;
            entries.push((id, v));
        }
        let features = SparseVector::new(entries)?;
        Self::new(features, label, weight, elapsed, time_to_click)
            .map_err(|e| CoreError::Parse { line: line_no, msg: e.to_string() })
    }
}

/// Immutable versioned copy of trained parameters emitted during continuous
/// training. The parameter block is opaque here; the trainer instantiates it.
#[derive(Debug, Clone)]
pub struct ModelSnapshot<P> {
    /// Strictly increasing across emissions from one trainer.
    pub version: u64,
    /// Training-step count at emission time.
    pub step: u64,
    pub params: P,
}

/// Optimization hyperparameters. Defaults are the reference operating point:
/// SGD with learning rate 0.02, decay 1e-6, batch size 128; the delayed
/// feedback loss uses its own learning rate 0.005 and L2 strength 2.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub df_learning_rate: f64,
    pub df_l2_alpha: f64,
    pub deep_layers: Vec<usize>,
    pub negative_downsample_rate: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            decay: 1e-6,
            batch_size: 128,
            df_learning_rate: 0.005,
            df_l2_alpha: 2.0,
            deep_layers: vec![400, 300, 200, 100],
            negative_downsample_rate: 0.05,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |msg: String| Err(CoreError::InvalidHyperparams(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad(format!("decay must be non-negative, got {}", self.decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.df_learning_rate > 0.0 && self.df_learning_rate.is_finite()) {
            return bad(format!(
                "df_learning_rate must be positive, got {}",
                self.df_learning_rate
            ));
        }
        if !(self.df_l2_alpha >= 0.0 && self.df_l2_alpha.is_finite()) {
            return bad(format!("df_l2_alpha must be non-negative, got {}", self.df_l2_alpha));
        }
        if self.deep_layers.iter().any(|&l| l == 0) {
            return bad("deep_layers must all be positive".into());
        }
        if !(self.negative_downsample_rate > 0.0 && self.negative_downsample_rate <= 1.0) {
            return bad(format!(
                "negative_downsample_rate must be in (0, 1], got {}",
                self.negative_downsample_rate
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(entries: &[(u32, f64)]) -> SparseVector {
        SparseVector::new(entries.to_vec()).unwrap()
    }

    #[test]
    fn sparse_vector_canonicalizes() {
        let v = sv(&[(5, 1.0), (2, 2.0), (5, 3.0), (7, 0.0)]);
        assert_eq!(v.entries(), &[(2, 2.0), (5, 4.0)]);
        assert!(SparseVector::new(vec![(1, f64::NAN)]).is_err());
    }

    #[test]
    fn dot_examples() {
        let w = [3.0, 9.0, 0.5];
        assert_eq!(SparseVector::empty().dot(&w).unwrap(), 0.0);
        assert_eq!(sv(&[(0, 1.0), (2, 2.0)]).dot(&w).unwrap(), 4.0);
        assert_eq!(sv(&[(0, 1.0)]).dot(&[-1.0]).unwrap(), -1.0);
        assert!(matches!(
            sv(&[(3, 1.0)]).dot(&w),
            Err(CoreError::FeatureIdOutOfRange { id: 3, dim: 3 })
        ));
    }

    #[test]
    fn dot_is_linear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..6usize);
            let v = sv(&(0..n)
                .map(|i| (i as u32 * 2, rng.random_range(-2.0..2.0)))
                .collect::<Vec<_>>());
            let dim = 12;
            let w1: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w2: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let combo: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let lhs = v.dot(&combo).unwrap();
            let rhs = a * v.dot(&w1).unwrap() + b * v.dot(&w2).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn impression_invariants() {
        assert!(ImpressionEvent::new(0, 1.0, SparseVector::empty(), true, Some(2.0)).is_ok());
        assert!(ImpressionEvent::new(0, 1.0, SparseVector::empty(), true, None).is_err());
        assert!(ImpressionEvent::new(0, 1.0, SparseVector::empty(), false, Some(2.0)).is_err());
        assert!(ImpressionEvent::new(0, 1.0, SparseVector::empty(), true, Some(0.0)).is_err());
    }

    #[test]
    fn example_invariants() {
        let x = sv(&[(0, 1.0)]);
        assert!(TrainingExample::new(x.clone(), false, 1.0, None, Some(3.0)).is_err());
        assert!(TrainingExample::new(x.clone(), true, 0.0, None, Some(3.0)).is_err());
        assert!(TrainingExample::new(x, true, 1.0, Some(10.0), Some(3.0)).is_ok());
    }

    #[test]
    fn line_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let label = rng.random_bool(0.5);
            let n = rng.random_range(0..5usize);
            let x = sv(&(0..n)
                .map(|i| (i as u32 * 3 + 1, rng.random_range(-4.0..4.0)))
                .collect::<Vec<_>>());
            let ex = TrainingExample::new(
                x,
                label,
                rng.random_range(0.01..30.0),
                if rng.random_bool(0.7) { Some(rng.random_range(0.0..1e5)) } else { None },
                if label { Some(rng.random_range(1e-3..1e4)) } else { None },
            )
            .unwrap();
            let line = ex.to_line();
            let back = TrainingExample::parse_line(&line, 0).unwrap();
            assert_eq!(ex, back);
        }
    }

    #[test]
    fn parse_errors_carry_line_number() {
        let err = TrainingExample::parse_line("1\tx\t\t", 42).unwrap_err();
        match err {
            CoreError::Parse { line, .. } => assert_eq!(line, 42),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(TrainingExample::parse_line("1\t1.0", 0).is_err());
        assert!(TrainingExample::parse_line("2\t1.0\t\t", 0).is_err());
    }

    #[test]
    fn hyperparams_defaults_and_validation() {
        let h = Hyperparams::default();
        assert_eq!(h.learning_rate, 0.02);
        assert_eq!(h.decay, 1e-6);
        assert_eq!(h.batch_size, 128);
        assert_eq!(h.df_learning_rate, 0.005);
        assert_eq!(h.df_l2_alpha, 2.0);
        assert_eq!(h.deep_layers, vec![400, 300, 200, 100]);
        assert_eq!(h.negative_downsample_rate, 0.05);
        h.validate().unwrap();
        let mut bad = h.clone();
        bad.negative_downsample_rate = 0.0;
        assert!(bad.validate().is_err());
    }
}
