//! Non-neural core of a time-lapse embryo measurement pipeline.
//!
//! The crate covers everything between the networks: label-noise-aware stage
//! loss, monotone stage decoding, ROI extraction, fragmentation gating,
//! cross-focal-plane candidate merging, the evaluation metrics, and a
//! synthetic data generator that stands in for the networks during testing.
//!
//! Probability and metric code is generic over [`Real`]; the aliases below
//! fix the scalar to `f64`, which is what the pipeline and file formats use.

pub mod decoder;
pub mod gating;
pub mod geometry;
pub mod json;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod soft_loss;
pub mod synth;

pub use scalar::Real;

pub type ProbVector = model::ProbVector13<f64>;
pub type StageMatrix = model::StageProbabilityMatrix<f64>;
pub type Confusion = model::ConfusionMatrix<f64>;
pub type Candidate = model::InstanceCandidate<f64>;
pub type Trajectory = decoder::TrajectoryResult<f64>;
pub type Fragmentation = gating::FragmentationScore<f64>;
pub type Gate = gating::GateDecision<f64>;

pub type ProbVectorF32 = model::ProbVector13<f32>;
pub type StageMatrixF32 = model::StageProbabilityMatrix<f32>;
pub type ConfusionF32 = model::ConfusionMatrix<f32>;
