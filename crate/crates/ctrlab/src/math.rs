//! Numerically stable scalar primitives shared by models, losses and metrics.

/// Logistic sigmoid, stable in both tails.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(z)) without intermediate underflow.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// ln(1 + e^z). For large z this is z itself; for very negative z it is ~e^z.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// ln(e^a + e^b), tolerating -inf arguments.
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Inverse sigmoid: ln(p / (1 - p)).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
