//! Character-level attentional encoder-decoder.
//!
//! A bidirectional GRU reads the base word followed by the tag token; a GRU
//! decoder with additive attention emits the derived form one character at
//! a time. [`Seq2SeqParams`] holds the raw network, [`Seq2SeqModel`] pairs it
//! with a vocabulary and string-level helpers.

mod beam;
mod network;

pub use beam::{rank, Hypothesis};
pub use network::{Attention, Dims, EncodedSource, Seq2SeqParams, Specials, Step};
mod model;
mod train;

pub use model::{sidecar_path, Selection, Seq2SeqConfig, Seq2SeqModel};
pub use train::{dev_scores, train, EpochRecord, TrainLog};
