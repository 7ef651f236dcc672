//! Corpora with known structure, used to check that training recovers it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::NegativeSampler;
use crate::error::{Error, Result};

/// A joint distribution over `(word, context)` cells with known PMI.
#[derive(Debug, Clone)]
pub struct PlantedJoint {
    num_words: usize,
    probs: Vec<f64>,
}

impl PlantedJoint {
    /// `P(i, j) ∝ exp(−decay·d(i, j))` with `d` the distance around a ring
    /// of `num_words` words. The matrix is circulant, so both marginals are
    /// uniform.
    pub fn ring(num_words: usize, decay: f64) -> Result<Self> {
        if num_words < 2 {
            return Err(Error::InvalidArgument("need at least 2 words".into()));
        }
        if !(decay.is_finite() && decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "decay {decay} must be non-negative"
            )));
        }
        let mut probs = Vec::with_capacity(num_words * num_words);
        for i in 0..num_words {
            for j in 0..num_words {
                let d = i.abs_diff(j);
                let d = d.min(num_words - d);
                probs.push((-decay * d as f64).exp());
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Self { num_words, probs })
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    pub fn prob(&self, word: u32, context: u32) -> f64 {
        self.probs[word as usize * self.num_words + context as usize]
    }

    pub fn word_marginal(&self, word: u32) -> f64 {
        (0..self.num_words as u32).map(|c| self.prob(word, c)).sum()
    }

    pub fn context_marginal(&self, context: u32) -> f64 {
        (0..self.num_words as u32)
            .map(|w| self.prob(w, context))
            .sum()
    }

    /// Population PMI of a cell.
    pub fn pmi(&self, word: u32, context: u32) -> f64 {
        (self.prob(word, context) / (self.word_marginal(word) * self.context_marginal(context)))
            .ln()
    }

    /// Independent draws of `count` cells.
    pub fn sample_pairs(&self, count: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
        let sampler = NegativeSampler::new(&self.probs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.num_words as u32;
        Ok((0..count)
            .map(|_| {
                let cell = sampler.sample(&mut rng);
                (cell / n, cell % n)
            })
            .collect())
    }
}

/// Token stream drawn from a two-state topic chain.
#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub tokens: Vec<u32>,
    pub words_per_topic: usize,
    /// Probability that the next token keeps the current topic.
    pub stay_probability: f64,
}

impl TopicCorpus {
    /// Words `0..n` belong to topic 0, `n..2n` to topic 1.
    pub fn topic_of(&self, word: u32) -> usize {
        word as usize / self.words_per_topic
    }
}

/// Share of window pairs that fall in the same topic when the chain keeps
/// its topic with correlation `r = 2·stay − 1` and each centre draws its
/// reach uniformly from `1..=window`.
pub fn within_topic_share(correlation: f64, window: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for d in 1..=window {
        // Offset d is inside the drawn reach for window − d + 1 of the W reaches.
        let w = (window - d + 1) as f64;
        num += w * 0.5 * (1.0 + correlation.powi(d as i32));
        den += w;
    }
    num / den
}

/// Generates `length` tokens with a topic-stay probability chosen so that
/// within-topic window pairs outnumber cross-topic ones `ratio` to one.
pub fn two_topic_corpus(
    words_per_topic: usize,
    length: usize,
    ratio: f64,
    window: usize,
    seed: u64,
) -> Result<TopicCorpus> {
    if words_per_topic == 0 || length == 0 || window == 0 {
        return Err(Error::InvalidArgument(
            "topic corpus sizes must be positive".into(),
        ));
    }
    if !(ratio.is_finite() && ratio > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} must exceed 1"
        )));
    }
    let target = ratio / (1.0 + ratio);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if within_topic_share(mid, window) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let stay = 0.5 * (1.0 + 0.5 * (lo + hi));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topic = rng.random_range(0..2usize);
    let mut tokens = Vec::with_capacity(length);
    for i in 0..length {
        if i > 0 && rng.random::<f64>() >= stay {
            topic = 1 - topic;
        }
        let word = topic * words_per_topic + rng.random_range(0..words_per_topic);
        tokens.push(word as u32);
    }
    Ok(TopicCorpus {
        tokens,
        words_per_topic,
        stay_probability: stay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{empirical_pmi, gen_pairs, PairStream};

    #[test]
    fn ring_joint_has_uniform_marginals() {
        let j = PlantedJoint::ring(10, 0.6).unwrap();
        for w in 0..10 {
            assert!((j.word_marginal(w) - 0.1).abs() < 1e-15);
            assert!((j.context_marginal(w) - 0.1).abs() < 1e-15);
        }
        assert!((j.pmi(2, 3) - j.pmi(7, 6)).abs() < 1e-12);
        assert!((j.pmi(0, 0) - j.pmi(0, 1) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn sampled_pmi_approaches_population() {
        let j = PlantedJoint::ring(10, 0.6).unwrap();
        let pairs = j.sample_pairs(400_000, 3).unwrap();
        let t = empirical_pmi(pairs).unwrap();
        for e in t.entries() {
            // Relative count error is about 1/√count; allow four of those.
            let tol = 4.0 / (e.count as f64).sqrt();
            assert!((e.pmi - j.pmi(e.word, e.context)).abs() < tol, "{e:?}");
        }
    }

    #[test]
    fn topic_chain_hits_requested_ratio() {
        let c = two_topic_corpus(50, 200_000, 10.0, 5, 4).unwrap();
        assert!(c.stay_probability > 0.9 && c.stay_probability < 1.0);
        let (mut within, mut cross) = (0u64, 0u64);
        for (w, ctx) in gen_pairs(&PairStream::new(&c.tokens, 5, 1)) {
            if c.topic_of(w) == c.topic_of(ctx) {
                within += 1;
            } else {
                cross += 1;
            }
        }
        let ratio = within as f64 / cross as f64;
        assert!((ratio - 10.0).abs() < 0.6, "{ratio}");
        assert!(c.tokens.iter().all(|&t| t < 100));
    }

    #[test]
    fn invalid_settings() {
        assert!(PlantedJoint::ring(1, 0.5).is_err());
        assert!(PlantedJoint::ring(5, -1.0).is_err());
        assert!(two_topic_corpus(50, 100, 0.5, 5, 0).is_err());
        assert!(two_topic_corpus(0, 100, 10.0, 5, 0).is_err());
    }
}
