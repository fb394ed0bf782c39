//! Core of an end-to-end retrieval-augmented generator with adaptive context
//! filtering.
//!
//! A small encoder-decoder generator shares its encoder with a binary
//! classification head that predicts, for every retrieved passage and for a
//! pre-generated pseudo-answer, whether it contains the answer. Both heads are
//! trained jointly under a weighted loss, with silver labels produced by
//! string inclusion, lexical overlap or a likelihood-ratio criterion.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command-line
//! front end and process orchestration live in the companion `afg` crate.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

pub mod corpus;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod model;
pub mod numerics;
pub mod pseudo;
pub mod rng;
pub mod text;
pub mod training;

pub use error::{Error, Result};
