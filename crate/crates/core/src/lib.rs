//! Unsupervised multi-modal misinformation detection.
//!
//! Four modality encoders turn raw news records into embeddings:
//! source credibility ([`source`]), affective text features ([`text`]),
//! propagation speed ([`prop`]) and user engagement ([`user`]). The
//! [`umd2`] module fuses them through a masked gated multimodal unit and
//! trains a teacher-student clustering model with noise-robust losses.
//! [`eval`] maps clusters to labels and scores them, and [`dataset`] builds
//! datasets from offline social-media dumps or synthesizes ground-truthed
//! ones.

pub mod datamodel;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod prop;
pub mod rng;
pub mod source;
pub mod text;
pub mod umd2;
pub mod user;

pub use error::{Error, Result};
