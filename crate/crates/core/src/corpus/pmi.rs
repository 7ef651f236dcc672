use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// One observed `(word, context)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmiEntry {
    pub word: u32,
    pub context: u32,
    pub count: u64,
    pub pmi: f64,
}

/// Sparse PMI over a pair multiset; unobserved cells are absent.
#[derive(Debug, Clone)]
pub struct PmiTable {
    total: u64,
    word_counts: HashMap<u32, u64>,
    context_counts: HashMap<u32, u64>,
    joint: BTreeMap<(u32, u32), u64>,
}

impl PmiTable {
    pub fn total_pairs(&self) -> u64 {
        self.total
    }

    pub fn count(&self, word: u32, context: u32) -> u64 {
        self.joint.get(&(word, context)).copied().unwrap_or(0)
    }

    pub fn word_count(&self, word: u32) -> u64 {
        self.word_counts.get(&word).copied().unwrap_or(0)
    }

    pub fn context_count(&self, context: u32) -> u64 {
        self.context_counts.get(&context).copied().unwrap_or(0)
    }

    /// `ln[#(w,c)·N / (#(w)·#(c))]`, or `None` without co-occurrence.
    pub fn pmi(&self, word: u32, context: u32) -> Option<f64> {
        let joint = *self.joint.get(&(word, context))?;
        Some(self.pmi_of(word, context, joint))
    }

    fn pmi_of(&self, word: u32, context: u32, joint: u64) -> f64 {
        let n = self.total as f64;
        let w = self.word_counts[&word] as f64;
        let c = self.context_counts[&context] as f64;
        (joint as f64 * n / (w * c)).ln()
    }

    /// Observed cells in `(word, context)` order.
    pub fn entries(&self) -> impl Iterator<Item = PmiEntry> + '_ {
        self.joint
            .iter()
            .map(|(&(word, context), &count)| PmiEntry {
                word,
                context,
                count,
                pmi: self.pmi_of(word, context, count),
            })
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }
}

/// Natural-log PMI with marginals taken from the same multiset.
pub fn empirical_pmi<I>(pairs: I) -> Result<PmiTable>
where
    I: IntoIterator<Item = (u32, u32)>,
{
    let mut table = PmiTable {
        total: 0,
        word_counts: HashMap::new(),
        context_counts: HashMap::new(),
        joint: BTreeMap::new(),
    };
    for (w, c) in pairs {
        table.total += 1;
        *table.word_counts.entry(w).or_default() += 1;
        *table.context_counts.entry(c).or_default() += 1;
        *table.joint.entry((w, c)).or_default() += 1;
    }
    if table.total == 0 {
        return Err(Error::Empty("pair multiset is empty".into()));
    }
    Ok(table)
}
