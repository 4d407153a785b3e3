//! Streaming speech-to-speech conversion engine.

pub mod acceptance;
pub mod archdsl;
pub mod bench;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod layout;
pub mod nncore;
pub mod quant;
pub mod runtime;
pub mod vocoder;

pub use error::{Error, Result};
