//! Multi-hop question answering over knowledge graphs: a trainable stepwise
//! graph reasoner, reasoning-path extraction, few-shot prompt construction
//! and an evaluation harness around a pluggable completion client.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod kg;
pub mod llm;
pub mod pathgen;
pub mod prompt;
pub mod reasoner;

pub use error::{Error, ErrorKind, Result};
