//! Translation proofreading pipeline.
//!
//! A multi-width CNN feeds a bidirectional transformer encoder; target slots
//! are tagged with a linear-chain CRF over an interleaved gap/token lattice,
//! and flagged slots are rewritten by an attentive GRU decoder backed by a
//! translation memory. Everything, including reverse-mode differentiation,
//! is implemented in this crate on `f64`.

pub mod correct;
pub mod corpus;
pub mod detect;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lattice;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use rng::Rng;
