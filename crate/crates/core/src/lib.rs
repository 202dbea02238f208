//! Bidirectional multimodal LSTM image captioning.

pub mod checkpoint;
pub mod data;
pub mod dd;
pub mod error;
pub mod eval;
pub mod infer;
pub mod lstm;
pub mod model;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};
