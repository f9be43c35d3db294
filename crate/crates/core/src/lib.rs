//! Semantic-aware shared diffusion sampling on a synthetic concept world.
//!
//! Prompts whose embeddings are similar are grouped; each group runs the
//! early, high-noise part of a DDIM trajectory once under the mean condition
//! and then branches per prompt. The denoiser can be trained with a plain
//! noise-prediction loss or with a hybrid loss that also supervises the
//! shared phase on group averages.

pub mod data;
pub mod error;
pub mod grouping;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod schedule;
pub mod training;

pub use error::{Result, SageError};
pub use grouping::{PromptGroup, SimilarityGraph};
pub use model::{ConceptEmbedding, Denoiser, Guidance, NoisePredictor};
pub use numerics::{DenoiserParams, Rng};
pub use schedule::{NoiseSchedule, SamplingGrid, ScheduleKind};
