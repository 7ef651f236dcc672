use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How circuit gradients are obtained inside a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMethod {
    #[default]
    Adjoint,
    ParameterShift,
}

impl fmt::Display for GradientMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adjoint => "adjoint",
            Self::ParameterShift => "parameter-shift",
        })
    }
}

impl FromStr for GradientMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjoint" => Ok(Self::Adjoint),
            "parameter-shift" | "shift" => Ok(Self::ParameterShift),
            _ => Err(Error::InvalidArgument(format!(
                "unknown gradient method '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub lambda_decay: f64,
    pub lambda_ent: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Learn the fidelity head's scale instead of keeping it fixed.
    pub train_beta: bool,
    pub gradient: GradientMethod,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 2048,
            negatives: 5,
            lambda_decay: 1e-5,
            lambda_ent: 1e-4,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            train_beta: false,
            gradient: GradientMethod::Adjoint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("lambda_decay", self.lambda_decay),
            ("lambda_ent", self.lambda_ent),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.negatives == 0 {
            return Err(Error::InvalidArgument(
                "negatives must be at least 1".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Format(format!("bad value '{value}' for {key}")))
        }
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "negatives" | "k" => self.negatives = parse(key, value)?,
            "lambda_decay" => self.lambda_decay = parse(key, value)?,
            "lambda_ent" => self.lambda_ent = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_beta" => self.train_beta = parse(key, value)?,
            "gradient" => self.gradient = value.parse()?,
            _ => return Err(Error::Format(format!("unknown training setting '{key}'"))),
        }
        Ok(())
    }

    /// Reads flat `key = value` lines on top of the defaults. Blank lines
    /// and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("config line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 2e-3);
        assert_eq!(c.batch_size, 2048);
        assert_eq!(c.negatives, 5);
        assert_eq!(c.lambda_decay, 1e-5);
        assert_eq!(c.lambda_ent, 1e-4);
        assert_eq!(c.max_epochs, 50);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parse_key_values() {
        let c = TrainConfig::parse(
            "# run 3\nlearning_rate = 0.01\nk=10\n\nseed=7 # fixed\ngradient=parameter-shift\ntrain_beta=true\n",
        )
        .unwrap();
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.negatives, 10);
        assert_eq!(c.seed, 7);
        assert_eq!(c.gradient, GradientMethod::ParameterShift);
        assert!(c.train_beta);
        assert_eq!(c.batch_size, 2048);
    }

    #[test]
    fn parse_errors() {
        assert!(TrainConfig::parse("bogus=1").is_err());
        assert!(TrainConfig::parse("learning_rate").is_err());
        assert!(TrainConfig::parse("batch_size=-3").is_err());
        assert!(TrainConfig::parse("negatives=0").is_err());
        assert!(TrainConfig::parse("learning_rate=0").is_err());
    }
}
