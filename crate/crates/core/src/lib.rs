//! Word embeddings as parameterized quantum states.
//!
//! Every vocabulary item is a shallow re-uploading circuit on a few qubits,
//! simulated exactly as a statevector. Pairs of states are compared by
//! fidelity, scored by a fidelity or logit-fidelity head and trained with a
//! negative-sampling contrastive loss.

pub mod ansatz;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod noise;
pub mod qstate;
pub mod scoring;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
