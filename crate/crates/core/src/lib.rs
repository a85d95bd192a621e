//! Character-level LSTM language models trained with hand-written truncated
//! backpropagation through time.
//!
//! The crate covers the whole pipeline: corpus loading and batching
//! ([`data`]), the stacked peephole LSTM ([`model`]), its reverse pass
//! ([`bptt`]), optimizers ([`optim`]), the four training and sampling
//! schemes ([`schemes`]), perplexity and timing ([`eval`]) and a flat binary
//! checkpoint format ([`checkpoint`]).

pub mod bptt;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod schemes;

/// Index of a token in a [`data::Vocabulary`].
pub type TokenId = usize;

pub use error::{Error, Result};
