use crate::error::{ensure_finite, Error, Result};

/// `−ln σ(x) = ln(1 + e^{−x})` without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over positives of `−ln σ(s⁺) − Σ_n ln σ(−s⁻_n)`.
pub fn nce_loss(positive: &[f64], negative: &[Vec<f64>]) -> Result<f64> {
    if positive.is_empty() {
        return Err(Error::Empty("no positive scores".into()));
    }
    if positive.len() != negative.len() {
        return Err(Error::Shape(format!(
            "{} positives but {} negative lists",
            positive.len(),
            negative.len()
        )));
    }
    let k = negative[0].len();
    if negative.iter().any(|n| n.len() != k) {
        return Err(Error::Shape(
            "every positive needs the same number of negatives".into(),
        ));
    }
    let mut total = 0.0;
    for (&s, negs) in positive.iter().zip(negative) {
        total += neg_log_sigmoid(ensure_finite(s, "positive score")?);
        for &n in negs {
            total += neg_log_sigmoid(-ensure_finite(n, "negative score")?);
        }
    }
    Ok(total / positive.len() as f64)
}

/// `λ_ent · mean(1 − P)` over a batch of per-token, per-qubit purities.
pub fn ent_regularizer(purities: &[Vec<f64>], lambda_ent: f64) -> Result<f64> {
    if purities.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for row in purities {
        for &p in row {
            if !(0.5 - 1e-9..=1.0 + 1e-9).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "single-qubit purity {p} outside [0.5, 1]"
                )));
            }
            sum += 1.0 - p;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(lambda_ent * sum / n as f64)
}
