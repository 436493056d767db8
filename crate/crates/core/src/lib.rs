//! Toolkit for building and analyzing bilingual pretraining transfer
//! graphs over balanced multilingual corpora.

pub mod corpus;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod mlm;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod subword;
pub mod synthetic;

pub use error::{Error, Result};
