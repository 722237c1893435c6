//! Unsupervised text style transfer via machine-translation bootstrapping.
//!
//! The pipeline induces a word-level transfer lexicon from non-parallel
//! style corpora, builds monotone SMT systems on top of style language
//! models to fabricate pseudo-parallel data, then trains bidirectional
//! attention seq2seq models with classifier-rewarded iterative
//! back-translation.

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod lexicon;
pub mod eval;
pub mod ngram;
pub mod optim;
pub mod pseudo;
pub mod seq2seq;
pub mod smt;
pub mod synth;

pub use error::{Error, Result};
