//! EEG-image contrastive alignment toolkit.
//!
//! Trains a convolutional EEG encoder against a bank of precomputed image
//! embeddings with a symmetric InfoNCE objective, then performs zero-shot
//! concept retrieval by cosine similarity against class templates. All
//! numerics are hand-rolled (forward and backward passes alike) so every
//! gradient can be validated against finite differences, and every run is
//! bit-reproducible for a fixed seed on a fixed thread count.

pub mod analysis;
pub mod contrastive;
pub mod data_io;
pub mod encoders;
pub mod error;
pub mod gradsuite;
pub mod numerics;
pub mod preprocess;
pub mod zeroshot;

pub use error::{Error, Result};
