//! Multimodal chronic-disease risk prediction from clinical notes and lab panels.

pub mod attribution;
pub mod cohort;
pub mod error;
pub mod fusion;
pub mod lab_encoder;
pub mod nn;
pub mod numeric;
pub mod text;
pub mod textualize;
pub mod train;

pub use error::{Error, Result};
