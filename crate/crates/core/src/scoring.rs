//! Scoring heads mapping a fidelity to an unnormalized log-odds score.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default clip for the logit head.
pub const DEFAULT_EPSILON: f64 = 1e-6;

const FIDELITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// `β·F`
    Fidelity,
    /// `α·logit(clip(F, ε, 1−ε)) + b`
    LogitFidelity,
}

impl HeadKind {
    pub fn code(self) -> u32 {
        match self {
            HeadKind::Fidelity => 0,
            HeadKind::LogitFidelity => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(HeadKind::Fidelity),
            1 => Ok(HeadKind::LogitFidelity),
            _ => Err(Error::Format(format!("unknown head code {code}"))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Fidelity => "f",
            HeadKind::LogitFidelity => "lf",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "fidelity" => Ok(HeadKind::Fidelity),
            "lf" | "logit-fidelity" | "logit_fidelity" => Ok(HeadKind::LogitFidelity),
            other => Err(Error::InvalidArgument(format!("unknown head '{other}'"))),
        }
    }
}

/// Head selection plus its scalars. Only the scalars of the selected kind are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub beta: f64,
    pub alpha: f64,
    pub b: f64,
    pub epsilon: f64,
}

impl HeadConfig {
    pub fn fidelity(beta: f64) -> Result<Self> {
        let head = Self {
            kind: HeadKind::Fidelity,
            beta,
            alpha: 2.0,
            b: 0.0,
            epsilon: DEFAULT_EPSILON,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn logit_fidelity(alpha: f64, b: f64) -> Result<Self> {
        let head = Self {
            kind: HeadKind::LogitFidelity,
            beta: 10.0,
            alpha,
            b,
            epsilon: DEFAULT_EPSILON,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "b must be finite, got {}",
                self.b
            )));
        }
        Ok(())
    }

    fn clip(&self, f: f64) -> f64 {
        f.clamp(self.epsilon, 1.0 - self.epsilon)
    }

    fn inside_band(&self, f: f64) -> bool {
        f >= self.epsilon && f <= 1.0 - self.epsilon
    }
}

impl Default for HeadConfig {
    /// Logit-fidelity head with `α = 2`, `b = 0`.
    fn default() -> Self {
        Self {
            kind: HeadKind::LogitFidelity,
            beta: 10.0,
            alpha: 2.0,
            b: 0.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn check_fidelity(f: f64) -> Result<f64> {
    if !(-FIDELITY_SLACK..=1.0 + FIDELITY_SLACK).contains(&f) {
        return Err(Error::InvalidArgument(format!(
            "fidelity {f} outside [0, 1]"
        )));
    }
    Ok(f.clamp(0.0, 1.0))
}

/// Score of a pair with fidelity `f`.
pub fn score(head: &HeadConfig, f: f64) -> Result<f64> {
    let f = check_fidelity(f)?;
    Ok(score_unchecked(head, f))
}

pub(crate) fn score_unchecked(head: &HeadConfig, f: f64) -> f64 {
    match head.kind {
        HeadKind::Fidelity => head.beta * f,
        HeadKind::LogitFidelity => head.alpha * logit(head.clip(f)) + head.b,
    }
}

/// `ds/dF`; zero where the clip saturates.
pub fn score_gradient(head: &HeadConfig, f: f64) -> Result<f64> {
    let f = check_fidelity(f)?;
    Ok(score_gradient_unchecked(head, f))
}

pub(crate) fn score_gradient_unchecked(head: &HeadConfig, f: f64) -> f64 {
    match head.kind {
        HeadKind::Fidelity => head.beta,
        HeadKind::LogitFidelity if head.inside_band(f) => head.alpha / (f * (1.0 - f)),
        HeadKind::LogitFidelity => 0.0,
    }
}

/// Partials of the score with respect to the head's own scalars.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeadGradient {
    pub d_beta: f64,
    pub d_alpha: f64,
    pub d_b: f64,
}

pub(crate) fn score_param_gradient(head: &HeadConfig, f: f64) -> HeadGradient {
    match head.kind {
        HeadKind::Fidelity => HeadGradient {
            d_beta: f,
            ..Default::default()
        },
        HeadKind::LogitFidelity => HeadGradient {
            d_alpha: logit(head.clip(f)),
            d_b: 1.0,
            ..Default::default()
        },
    }
}

/// Least-squares fit of `target ≈ α·logit(F_ε) + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub b: f64,
    pub rmse: f64,
}

pub fn calibrate_lf(pairs: &[(f64, f64)], epsilon: f64) -> Result<Calibration> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "calibration needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 0.5)"
        )));
    }
    let mut xs = Vec::with_capacity(pairs.len());
    for &(f, target) in pairs {
        let f = check_fidelity(f)?;
        if !target.is_finite() {
            return Err(Error::NonFinite(format!("calibration target {target}")));
        }
        xs.push(logit(f.clamp(epsilon, 1.0 - epsilon)));
    }
    let n = pairs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if sxx <= 1e-12 * n {
        return Err(Error::Degenerate(
            "all calibration fidelities map to the same logit".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(pairs)
        .map(|(x, p)| (x - mean_x) * (p.1 - mean_y))
        .sum();
    let alpha = sxy / sxx;
    let b = mean_y - alpha * mean_x;
    let sse: f64 = xs
        .iter()
        .zip(pairs)
        .map(|(x, p)| (alpha * x + b - p.1).powi(2))
        .sum();
    Ok(Calibration {
        alpha,
        b,
        rmse: (sse / n).sqrt(),
    })
}
