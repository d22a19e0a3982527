//! Text-conditioned few-shot video classification with transductive
//! prototype construction.
//!
//! Videos are sequences of frame-feature vectors. A FiLM-modulated encoder
//! embeds them, a task conditioner derives the modulation and class
//! embeddings from the support set's text descriptions, and a cross-attention
//! module pulls relevant unlabeled queries into the class prototypes before a
//! Mahalanobis classifier scores the queries.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod conditioner;
pub mod config;
pub mod datagen;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod evaluator;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
