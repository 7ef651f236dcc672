use rand::Rng;

use crate::error::{Error, Result};

/// Exponent applied to unigram counts for the noise distribution.
pub const NEGATIVE_POWER: f64 = 0.75;

/// Vose alias table: O(1) draws from a fixed discrete distribution.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    prob: Vec<f64>,
    alias: Vec<u32>,
    weights: Vec<f64>,
}

impl NegativeSampler {
    /// Noise distribution proportional to `count^0.75`.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let weights: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64).powf(NEGATIVE_POWER))
            .collect();
        Self::new(&weights)
    }

    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("sampler needs at least one outcome".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "sampler weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("sampler weights sum to zero".into()));
        }
        let n = weights.len();
        let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut scaled: Vec<f64> = normalized.iter().map(|p| p * n as f64).collect();
        let mut prob = vec![0.0; n];
        let mut alias = vec![0u32; n];
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);

        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
            alias[i] = i as u32;
        }
        Ok(Self {
            prob,
            alias,
            weights: normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// Target probabilities.
    pub fn probabilities(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i as u32
        } else {
            self.alias[i]
        }
    }
}
