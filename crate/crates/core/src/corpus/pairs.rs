use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Token-id sequence plus the settings for dynamic-window pair extraction.
#[derive(Debug, Clone)]
pub struct PairStream<'a> {
    pub source: &'a [u32],
    /// Maximum offset `W`; each centre draws its own window from `1..=W`.
    pub window: usize,
    pub seed: u64,
}

impl<'a> PairStream<'a> {
    pub fn new(source: &'a [u32], window: usize, seed: u64) -> Self {
        Self {
            source,
            window,
            seed,
        }
    }
}

/// Iterator over `(word, context)` pairs of a [`PairStream`].
pub struct PairIter<'a> {
    source: &'a [u32],
    window: usize,
    rng: ChaCha8Rng,
    centre: usize,
    lo: usize,
    hi: usize,
    next: usize,
}

impl<'a> PairIter<'a> {
    fn start_centre(&mut self) {
        let reach = self.rng.random_range(1..=self.window);
        self.lo = self.centre.saturating_sub(reach);
        self.hi = (self.centre + reach).min(self.source.len() - 1);
        self.next = self.lo;
    }
}

impl Iterator for PairIter<'_> {
    type Item = (u32, u32);

    fn next(&mut self) -> Option<(u32, u32)> {
        loop {
            if self.centre >= self.source.len() {
                return None;
            }
            while self.next <= self.hi {
                let j = self.next;
                self.next += 1;
                if j != self.centre {
                    return Some((self.source[self.centre], self.source[j]));
                }
            }
            self.centre += 1;
            if self.centre < self.source.len() {
                self.start_centre();
            }
        }
    }
}

/// For every position, draws `w'` uniformly from `1..=W` and emits the
/// centre paired with each neighbour at distance `≤ w'`.
///
/// A window of 0 yields nothing.
pub fn gen_pairs<'a>(ps: &PairStream<'a>) -> PairIter<'a> {
    let mut it = PairIter {
        source: ps.source,
        window: ps.window,
        rng: ChaCha8Rng::seed_from_u64(ps.seed),
        centre: 0,
        lo: 0,
        hi: 0,
        next: 1,
    };
    if ps.window == 0 {
        it.centre = ps.source.len();
    } else if !ps.source.is_empty() {
        it.start_centre();
    }
    it
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tokens_window_one() {
        let src = [7, 9];
        let pairs: Vec<_> = gen_pairs(&PairStream::new(&src, 1, 0)).collect();
        assert_eq!(pairs, vec![(7, 9), (9, 7)]);
    }

    #[test]
    fn degenerate_inputs_yield_nothing() {
        assert_eq!(gen_pairs(&PairStream::new(&[3], 5, 0)).count(), 0);
        assert_eq!(gen_pairs(&PairStream::new(&[], 5, 0)).count(), 0);
        assert_eq!(gen_pairs(&PairStream::new(&[1, 2, 3], 0, 0)).count(), 0);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let src: Vec<u32> = (0..500).map(|i| (i * 7919 % 37) as u32).collect();
        let a: Vec<_> = gen_pairs(&PairStream::new(&src, 5, 42)).collect();
        let b: Vec<_> = gen_pairs(&PairStream::new(&src, 5, 42)).collect();
        let c: Vec<_> = gen_pairs(&PairStream::new(&src, 5, 43)).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn offsets_stay_within_window() {
        // Ids equal positions so offsets can be read back.
        let src: Vec<u32> = (0..300).collect();
        let mut reaches = [0usize; 6];
        for (w, c) in gen_pairs(&PairStream::new(&src, 5, 9)) {
            let d = (w as i64 - c as i64).unsigned_abs() as usize;
            assert!((1..=5).contains(&d));
            reaches[d] += 1;
        }
        // Every offset up to W occurs, and nearer offsets are more common.
        assert!(reaches[1..].iter().all(|&n| n > 0));
        assert!(reaches[1] > reaches[5]);
    }
}
