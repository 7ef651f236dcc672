use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments over a flat parameter vector.
///
/// Updates may be sparse: only the listed indices move, and untouched
/// moments keep their values. Bias correction uses the global step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update of `params[i] -= lr·m̂/(√v̂ + eps)` for every `(i, g)`.
    pub fn update(&mut self, params: &mut [f64], grads: &[(usize, f64)], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, d) in self.deltas(grads, lr)? {
            params[i] += d;
        }
        Ok(())
    }

    /// Advances the moments and returns the additive change for each index
    /// without touching any parameters.
    pub fn deltas(&mut self, grads: &[(usize, f64)], lr: f64) -> Result<Vec<(usize, f64)>> {
        if let Some(&(i, _)) = grads.iter().find(|(i, _)| *i >= self.m.len()) {
            return Err(Error::Shape(format!("gradient index {i} out of range")));
        }
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powf(self.step as f64);
        let c2 = 1.0 - ADAM_BETA2.powf(self.step as f64);
        Ok(grads
            .iter()
            .map(|&(i, g)| {
                self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                (i, -lr * m_hat / (v_hat.sqrt() + ADAM_EPS))
            })
            .collect())
    }
}
