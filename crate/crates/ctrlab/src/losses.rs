//! The five training losses, each yielding a per-example value and exact
//! analytic gradients with respect to the model logit (and, for the delayed
//! feedback loss, the delay-model logit).
//!
//! All losses are pure functions of [`LossInput`] and accept a per-example
//! weight so downsampling corrections compose with any of them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{log_sigmoid, logsumexp2, sigmoid, softplus};
use crate::types::TrainingExample;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(
        "unknown loss {0:?}; expected one of log, delayed_feedback, pu, fn_weighted, fn_calibration"
    )]
    UnknownName(String),
    #[error("{loss} loss requires {field}")]
    MissingField { loss: LossKind, field: &'static str },
    #[error("calibration input must be a probability in [0, 1), got {value}")]
    CalibrationDomain { value: f64 },
}

/// The loss vocabulary exposed to configuration and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Log,
    DelayedFeedback,
    Pu,
    FnWeighted,
    /// Log-loss training on the biased labels plus the prediction-time
    /// transform `p = b/(1-b)`; not a distinct per-example loss.
    FnCalibration,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Log,
        LossKind::DelayedFeedback,
        LossKind::Pu,
        LossKind::FnWeighted,
        LossKind::FnCalibration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Log => "log",
            LossKind::DelayedFeedback => "delayed_feedback",
            LossKind::Pu => "pu",
            LossKind::FnWeighted => "fn_weighted",
            LossKind::FnCalibration => "fn_calibration",
        }
    }

    /// The per-example loss actually optimized during training.
    /// `fn_calibration` trains with plain log loss; everything else trains
    /// with itself.
    pub fn effective_training(self) -> LossKind {
        match self {
            LossKind::FnCalibration => LossKind::Log,
            other => other,
        }
    }

    /// Whether snapshots trained with this loss must be passed through
    /// [`fn_calibrate`] before their predictions are used.
    pub fn calibrates_predictions(self) -> bool {
        self == LossKind::FnCalibration
    }

    /// Whether training jointly fits an exponential delay model.
    pub fn requires_delay_model(self) -> bool {
        self == LossKind::DelayedFeedback
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(LossKind::Log),
            "delayed_feedback" => Ok(LossKind::DelayedFeedback),
            "pu" => Ok(LossKind::Pu),
            "fn_weighted" => Ok(LossKind::FnWeighted),
            "fn_calibration" => Ok(LossKind::FnCalibration),
            other => Err(LossError::UnknownName(other.to_string())),
        }
    }
}

/// Everything a loss may consume for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossInput {
    /// Model logit z, so the predicted probability is sigmoid(z).
    pub logit: f64,
    pub label: bool,
    /// Strictly positive example weight.
    pub weight: f64,
    /// Seconds since the impression; required by the delayed feedback loss
    /// on negatives.
    pub elapsed: Option<f64>,
    /// Seconds from impression to engagement; required by the delayed
    /// feedback loss on positives.
    pub time_to_click: Option<f64>,
    /// Delay-model logit `w_d . x`, so the exponential rate is its exp;
    /// required by the delayed feedback loss.
    pub delay_logit: Option<f64>,
}

impl LossInput {
    pub fn new(logit: f64, label: bool, weight: f64) -> Self {
        Self { logit, label, weight, elapsed: None, time_to_click: None, delay_logit: None }
    }

    pub fn from_example(example: &TrainingExample, logit: f64, delay_logit: Option<f64>) -> Self {
        Self {
            logit,
            label: example.label,
            weight: example.weight,
            elapsed: example.elapsed,
            time_to_click: example.time_to_click,
            delay_logit,
        }
    }

    fn label_f64(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-example loss value and gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d value / d logit.
    pub d_logit: f64,
    /// d value / d delay_logit; zero for losses without a delay model.
    pub d_delay_logit: f64,
}

/// Weighted cross-entropy on the observed label:
/// `-weight * [y log f + (1-y) log(1-f)]` with `f = sigmoid(z)`.
pub fn log_loss(input: &LossInput) -> LossOutput {
    let (z, w, y) = (input.logit, input.weight, input.label_f64());
    LossOutput {
        value: w * (y * softplus(-z) + (1.0 - y) * softplus(z)),
        d_logit: w * (sigmoid(z) - y),
        d_delay_logit: 0.0,
    }
}

/// Positive-unlabeled risk estimator. Positives contribute
/// `-[log f - log(1-f)] = -z`, descending the usual positive term while
/// ascending the corresponding negative term; unlabeled examples contribute
/// plain negative log loss. Per-example values can be negative, and the
/// summed empirical risk can diverge to -inf if positives dominate.
pub fn pu_loss(input: &LossInput) -> LossOutput {
    let (z, w) = (input.logit, input.weight);
    if input.label {
        LossOutput { value: -w * z, d_logit: -w, d_delay_logit: 0.0 }
    } else {
        LossOutput { value: w * softplus(z), d_logit: w * sigmoid(z), d_delay_logit: 0.0 }
    }
}

/// Joint conversion/delay likelihood under an exponential delay with rate
/// `lambda = exp(delay_logit)`.
///
/// A positive observed after delay d contributes
/// `-[log f + delay_logit - lambda*d]`. An unlabeled example at elapsed time
/// e contributes `-log[1 - f + f exp(-lambda e)]`, evaluated as
/// `softplus(-z) - logsumexp(-z, -lambda e)` which never under- or overflows
/// for finite logits.
pub fn delayed_feedback_loss(input: &LossInput) -> Result<LossOutput, LossError> {
    let missing =
        |field: &'static str| LossError::MissingField { loss: LossKind::DelayedFeedback, field };
    let dl = input.delay_logit.ok_or_else(|| missing("delay_logit"))?;
    let (z, w) = (input.logit, input.weight);
    let lambda = dl.exp();

    if input.label {
        let d = input.time_to_click.ok_or_else(|| missing("time_to_click"))?;
        let lambda_d = if d == 0.0 { 0.0 } else { lambda * d };
        Ok(LossOutput {
            value: -w * (log_sigmoid(z) + dl - lambda_d),
            d_logit: w * (sigmoid(z) - 1.0),
            d_delay_logit: w * (lambda_d - 1.0),
        })
    } else {
        let e = input.elapsed.ok_or_else(|| missing("elapsed"))?;
        // Guard the 0 * inf case; zero elapsed time means zero hazard mass.
        let lambda_e = if e == 0.0 { 0.0 } else { lambda * e };
        if lambda_e == 0.0 {
            // No time has passed: the observation carries no evidence.
            return Ok(LossOutput { value: 0.0, d_logit: 0.0, d_delay_logit: 0.0 });
        }
        let value = w * (softplus(-z) - logsumexp2(-z, -lambda_e));
        // d/dz = (1 - e^{-lambda e}) * sigmoid(lambda e - z) * sigmoid(z)
        let d_logit = w * -(-lambda_e).exp_m1() * sigmoid(lambda_e - z) * sigmoid(z);
        // d/d(dl) = e * lambda * sigmoid(z - lambda e); the log-space form
        // stays finite when lambda is huge but the survival factor is tiny.
        let d_delay_logit =
            if e == 0.0 { 0.0 } else { w * (e.ln() + dl + log_sigmoid(z - lambda_e)).exp() };
        Ok(LossOutput { value, d_logit, d_delay_logit })
    }
}

/// Importance-weighted log loss for streams that contain one fake negative
/// per impression plus a duplicated positive per engagement. Positives are
/// weighted `(1 + f)`, negatives `(1 - f)(1 + f)`, where the weights use a
/// frozen copy of `f = sigmoid(z)` that gradients do not flow through.
pub fn fn_weighted_loss(input: &LossInput) -> LossOutput {
    let (z, w) = (input.logit, input.weight);
    let f_frozen = sigmoid(z);
    if input.label {
        let scale = w * (1.0 + f_frozen);
        LossOutput {
            value: scale * softplus(-z),
            d_logit: scale * (sigmoid(z) - 1.0),
            d_delay_logit: 0.0,
        }
    } else {
        let scale = w * (1.0 - f_frozen) * (1.0 + f_frozen);
        LossOutput { value: scale * softplus(z), d_logit: scale * sigmoid(z), d_delay_logit: 0.0 }
    }
}

/// Recovers the true conversion probability from a model of the biased
/// fake-negative distribution: `p = b/(1-b)`, clamped to at most 1.
/// Monotone, with `[0, 0.5]` mapping onto `[0, 1]`.
pub fn fn_calibrate(b: f64) -> Result<f64, LossError> {
    if !(0.0..1.0).contains(&b) {
        return Err(LossError::CalibrationDomain { value: b });
    }
    Ok((b / (1.0 - b)).min(1.0))
}

/// Dispatches to the per-example loss used when training under `kind`.
/// `fn_calibration` resolves to log loss; its transform applies at
/// prediction time, not here.
pub fn compute(kind: LossKind, input: &LossInput) -> Result<LossOutput, LossError> {
    match kind.effective_training() {
        LossKind::Log => Ok(log_loss(input)),
        LossKind::Pu => Ok(pu_loss(input)),
        LossKind::FnWeighted => Ok(fn_weighted_loss(input)),
        LossKind::DelayedFeedback => delayed_feedback_loss(input),
        LossKind::FnCalibration => unreachable!("fn_calibration trains as log"),
    }
}

/// String-keyed dispatch for callers holding a raw configuration value.
pub fn loss_by_name(name: &str, input: &LossInput) -> Result<LossOutput, LossError> {
    compute(name.parse()?, input)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn log_loss_reference_points() {
        let out = log_loss(&LossInput::new(0.0, true, 1.0));
        close(out.value, LN_2, 1e-12);
        close(out.d_logit, -0.5, 1e-12);
        assert_eq!(out.d_delay_logit, 0.0);

        // Confident correct positive: loss vanishes.
        let out = log_loss(&LossInput::new(40.0, true, 1.0));
        assert!(out.value < 1e-17);

        let out = log_loss(&LossInput::new(0.0, false, 20.0));
        close(out.value, 20.0 * LN_2, 1e-12);
        close(out.value, 13.8629, 5e-5);
        close(out.d_logit, 10.0, 1e-12);
    }

    #[test]
    fn pu_loss_reference_points() {
        let out = pu_loss(&LossInput::new(0.0, true, 1.0));
        assert_eq!(out.value, 0.0);
        assert_eq!(out.d_logit, -1.0);

        let out = pu_loss(&LossInput::new(0.0, false, 1.0));
        close(out.value, LN_2, 1e-12);
        close(out.d_logit, 0.5, 1e-12);

        // f = 0.9 gives a negative per-example risk.
        let z = (0.9f64 / 0.1).ln();
        let out = pu_loss(&LossInput::new(z, true, 1.0));
        close(out.value, -2.19722, 1e-5);
        assert!(out.value < 0.0);
    }

    #[test]
    fn pu_is_log_loss_with_reversed_negative_term() {
        for z in [-6.0, -1.3, 0.0, 0.7, 4.2] {
            for w in [1.0, 3.5] {
                let pos = LossInput::new(z, true, w);
                let neg = LossInput::new(z, false, w);
                let pu = pu_loss(&pos).value;
                let ll_pos = log_loss(&pos).value;
                let ll_neg = log_loss(&neg).value;
                close(pu - ll_pos + ll_neg, 0.0, 1e-12);
            }
        }
    }

    fn df_input(z: f64, label: bool, dl: f64, elapsed: Option<f64>, ttc: Option<f64>) -> LossInput {
        LossInput { logit: z, label, weight: 1.0, elapsed, time_to_click: ttc, delay_logit: Some(dl) }
    }

    #[test]
    fn delayed_feedback_reference_points() {
        // Zero elapsed time carries no evidence.
        let out = delayed_feedback_loss(&df_input(0.3, false, 1.7, Some(0.0), None)).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.d_logit, 0.0);
        assert_eq!(out.d_delay_logit, 0.0);

        // Huge elapsed time reduces to log loss on a negative.
        let out = delayed_feedback_loss(&df_input(0.0, false, 0.0, Some(1e9), None)).unwrap();
        close(out.value, LN_2, 1e-12);

        // Positive with f=0.5, lambda=1, d=2: -(ln 0.5 + 0 - 2).
        let out = delayed_feedback_loss(&df_input(0.0, true, 0.0, None, Some(2.0))).unwrap();
        close(out.value, 2.693147, 5e-7);
        close(out.d_logit, -0.5, 1e-12);
        close(out.d_delay_logit, 1.0, 1e-12);
    }

    #[test]
    fn delayed_feedback_requires_fields() {
        let missing_dl = LossInput { delay_logit: None, ..df_input(0.0, false, 0.0, Some(1.0), None) };
        assert!(delayed_feedback_loss(&missing_dl).is_err());
        assert!(delayed_feedback_loss(&df_input(0.0, false, 0.0, None, None)).is_err());
        assert!(delayed_feedback_loss(&df_input(0.0, true, 0.0, None, None)).is_err());
    }

    #[test]
    fn delayed_feedback_extreme_logits_stay_finite() {
        for z in [-500.0, -37.0, 0.0, 37.0, 500.0] {
            for lambda_e in [0.0, 1e-12, 1.0, 1e3, 1e300] {
                let out =
                    delayed_feedback_loss(&df_input(z, false, 0.0, Some(lambda_e), None)).unwrap();
                assert!(out.value.is_finite(), "value at z={z}, e={lambda_e}");
                assert!(out.d_logit.is_finite());
                assert!(out.d_delay_logit.is_finite());
            }
        }
    }

    #[test]
    fn fn_weighted_reference_points() {
        // f = 0.5: positive weight 1.5, negative weight 0.75.
        let out = fn_weighted_loss(&LossInput::new(0.0, true, 1.0));
        close(out.value, 1.5 * LN_2, 1e-12);
        close(out.d_logit, 1.5 * -0.5, 1e-12);
        let out = fn_weighted_loss(&LossInput::new(0.0, false, 1.0));
        close(out.value, 0.75 * LN_2, 1e-12);
        close(out.d_logit, 0.75 * 0.5, 1e-12);

        // f -> 0: both weights -> 1, degenerating to log loss.
        let z = -40.0;
        for label in [true, false] {
            let input = LossInput::new(z, label, 1.0);
            let fnw = fn_weighted_loss(&input);
            let ll = log_loss(&input);
            close(fnw.value, ll.value, 1e-12 * ll.value.abs().max(1.0));
            close(fnw.d_logit, ll.d_logit, 1e-12);
        }
    }

    #[test]
    fn fn_calibrate_reference_points() {
        assert_eq!(fn_calibrate(0.0).unwrap(), 0.0);
        assert_eq!(fn_calibrate(0.5).unwrap(), 1.0);
        close(fn_calibrate(1.0 / 3.0).unwrap(), 0.5, 1e-12);
        // Above 0.5 the odds exceed 1 and clamp.
        assert_eq!(fn_calibrate(0.8).unwrap(), 1.0);
        assert!(fn_calibrate(1.0).is_err());
        assert!(fn_calibrate(-0.1).is_err());
        assert!(fn_calibrate(f64::NAN).is_err());
    }

    #[test]
    fn fn_calibrate_is_monotone_and_onto() {
        let mut prev = -1.0;
        for i in 0..=1000 {
            let b = i as f64 / 1001.0;
            let p = fn_calibrate(b).unwrap();
            assert!(p >= prev);
            prev = p;
        }
        // [0, 0.5] maps onto [0, 1]: endpoints hit exactly, midpoint lands inside.
        assert_eq!(fn_calibrate(0.0).unwrap(), 0.0);
        assert_eq!(fn_calibrate(0.5).unwrap(), 1.0);
        close(fn_calibrate(0.25).unwrap(), 1.0 / 3.0, 1e-12);
    }

    #[test]
    fn dispatch_by_name() {
        let input = LossInput::new(0.0, true, 1.0);
        close(loss_by_name("log", &input).unwrap().value, LN_2, 1e-12);
        assert_eq!(loss_by_name("pu", &input).unwrap().value, 0.0);
        // fn_calibration trains as log loss.
        close(loss_by_name("fn_calibration", &input).unwrap().value, LN_2, 1e-12);
        assert!(matches!(loss_by_name("huber", &input), Err(LossError::UnknownName(_))));
    }

    #[test]
    fn kind_round_trips_and_flags() {
        for kind in LossKind::ALL {
            assert_eq!(kind.as_str().parse::<LossKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{kind}\""));
            assert_eq!(serde_json::from_str::<LossKind>(&json).unwrap(), kind);
        }
        assert_eq!(LossKind::FnCalibration.effective_training(), LossKind::Log);
        assert!(LossKind::FnCalibration.calibrates_predictions());
        assert!(!LossKind::FnWeighted.calibrates_predictions());
        assert!(LossKind::DelayedFeedback.requires_delay_model());
        assert!(!LossKind::Pu.requires_delay_model());
    }
}
