//! Derivational paradigm completion.
//!
//! Given a base word and a derivational slot (`employ` + `AGENT`), produce
//! the derived form (`employer`). Two systems are provided: a greedy
//! averaged-perceptron edit transducer ([`baseline`]) and a character-level
//! attentional GRU encoder-decoder ([`seq2seq`]) trained with Adadelta on a
//! hand-written reverse-mode tape ([`numeric`]).

pub mod baseline;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod parallel;
pub mod predict;
pub mod seq2seq;
pub mod synthetic;

pub use error::{Error, Result};
