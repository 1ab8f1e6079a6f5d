//! A desk-scale streaming spoken-language-understanding cascade.
//!
//! Three modules map speech features to an intent: a causal convolutional
//! acoustic-phonetic frontend, an LSTM pronunciation model trained with CTC
//! over BPE wordpieces, and an LSTM language-understanding head. The crate
//! includes the reverse-mode autodiff engine the models train with, a
//! synthetic slot-grammar corpus generator, stepwise and multi-target
//! training procedures, pipeline and end-to-end intent decoding, and a
//! frame-by-frame streaming inference mode whose outputs match batch
//! inference bitwise.

pub mod autodiff;
pub mod bpe;
pub mod cascade;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod layers;
pub mod losses;
pub mod training;
pub mod error;
pub mod tensor;

pub use error::{Result, SluError};
pub use tensor::Tensor;
