//! NBED: an encoder-decoder edge detector with a bilateral encoder
//! (high-resolution location branch + low-resolution semantic branch),
//! a cascaded feature-fusion decoder, an annotator-robust weighted
//! cross-entropy loss, and the standard ODS/OIS boundary evaluation
//! protocol (NMS thinning + tolerance-based bipartite matching).
//!
//! Everything runs on the CPU in double precision. Forward and backward
//! passes are built on a small reverse-mode tape in [`tensor`].

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
