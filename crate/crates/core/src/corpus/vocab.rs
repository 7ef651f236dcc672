use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Lowercases `text` and splits it on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ↔ id maps with corpus counts.
///
/// Ids are dense and assigned by descending count, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
    total_tokens: u64,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from already tokenized text. Tokens are lowercased.
    pub fn from_tokens<I, S>(tokens: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut seen_any = false;
        for t in tokens {
            seen_any = true;
            *counts.entry(t.as_ref().to_lowercase()).or_default() += 1;
        }
        if !seen_any {
            return Err(Error::Empty("token stream is empty".into()));
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        if kept.is_empty() {
            return Err(Error::Empty(format!(
                "no token reaches min_count = {min_count}"
            )));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_sorted(kept, min_count)
    }

    /// Rebuilds a vocabulary whose id order is given explicitly.
    pub fn from_entries(entries: Vec<(String, u64)>, min_count: u64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("vocabulary has no entries".into()));
        }
        if let Some((t, c)) = entries.iter().find(|(_, c)| *c < min_count) {
            return Err(Error::Format(format!(
                "token '{t}' has count {c} below min_count {min_count}"
            )));
        }
        Self::from_sorted(entries, min_count)
    }

    fn from_sorted(entries: Vec<(String, u64)>, min_count: u64) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (id, (token, count)) in entries.into_iter().enumerate() {
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(Error::Format(format!("duplicate token '{token}'")));
            }
            tokens.push(token);
            counts.push(count);
        }
        let total_tokens = counts.iter().sum();
        Ok(Self {
            tokens,
            counts,
            index,
            total_tokens,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Sum of the counts of retained tokens.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Relative frequency of `id` among retained tokens.
    pub fn frequency(&self, id: u32) -> f64 {
        self.count(id) as f64 / self.total_tokens as f64
    }

    /// Maps tokens to ids, dropping out-of-vocabulary tokens.
    pub fn encode<I, S>(&self, tokens: I) -> Vec<u32>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        tokens
            .into_iter()
            .filter_map(|t| self.id(t.as_ref()))
            .collect()
    }
}

/// Tokenizes `text` and builds its vocabulary.
pub fn build_vocab(text: &str, min_count: u64) -> Result<Vocabulary> {
    Vocabulary::from_tokens(tokenize(text), min_count)
}

/// `max(0, 1 − sqrt(t / f(w)))`.
pub fn discard_probability(vocab: &Vocabulary, id: u32, t: f64) -> f64 {
    (1.0 - (t / vocab.frequency(id)).sqrt()).max(0.0)
}

/// Drops frequent tokens with the word2vec discard rule.
pub fn subsample<R: Rng + ?Sized>(
    ids: &[u32],
    vocab: &Vocabulary,
    t: f64,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "subsampling threshold must be positive, got {t}"
        )));
    }
    let discard: Vec<f64> = (0..vocab.len() as u32)
        .map(|id| discard_probability(vocab, id, t))
        .collect();
    Ok(ids
        .iter()
        .copied()
        .filter(|&id| {
            let p = discard[id as usize];
            // Keep-always tokens consume no randomness.
            p <= 0.0 || rng.random::<f64>() >= p
        })
        .collect())
}
