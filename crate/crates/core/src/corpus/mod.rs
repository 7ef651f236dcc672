//! Text ingestion: tokenization, vocabulary, subsampling, window pairs,
//! the negative sampler and empirical PMI.

mod io;
mod pairs;
mod pmi;
mod sampler;
mod vocab;

pub use io::{read_pairs, read_vocab, write_pairs, write_vocab};
pub use pairs::{gen_pairs, PairIter, PairStream};
pub use pmi::{empirical_pmi, PmiEntry, PmiTable};
pub use sampler::{NegativeSampler, NEGATIVE_POWER};
pub use vocab::{build_vocab, discard_probability, subsample, tokenize, Vocabulary};
