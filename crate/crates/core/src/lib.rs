//! Explainable fitness assessment: multimodal fusion of workout video and
//! action-lexicon text, with category, quality and explanation heads.

pub mod annotate;
pub mod autograd;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod heads;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{EfaError, Result};
pub use features::FeatureMatrix;
pub use tensor::Matrix;
