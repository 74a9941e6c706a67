//! Domain types shared by every stage of the pipeline.

mod candidate;
mod mask;
mod movie;
mod stage;

pub use candidate::{CandidateKind, InstanceCandidate};
pub use mask::{BBox, BinaryMask, SegmentationMap, ZonaClass};
pub use movie::{EmbryoMovie, MovieFrame, DEFAULT_PLANE_COUNT, FORMAT_VERSION};
pub use stage::{
    validate_prob_vector, ConfusionMatrix, ProbVector13, StageClass, StageProbabilityMatrix, ORDERED_STAGE_COUNT,
    STAGE_COUNT,
};

pub(crate) use stage::argmax;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("probability entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("probability entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("expected {expected} entries, found {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("confusion row {row}: {source}")]
    InvalidRow { row: usize, source: Box<ModelError> },
    #[error("stage matrix has no frames")]
    EmptyMatrix,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("frame times not strictly increasing at index {index}")]
    TimesNotIncreasing { index: usize },
    #[error("grid has zero width or height")]
    EmptyGrid,
    #[error("grid needs {expected} pixels, found {found}")]
    GridSize { expected: usize, found: usize },
    #[error("run lengths sum to {found}, grid has {expected} pixels")]
    RunLengthSum { expected: usize, found: u64 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("unknown zona class {0}")]
    UnknownZonaClass(u8),
    #[error("candidate mask is empty")]
    EmptyMask,
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("stored bbox {stored:?} does not match mask bbox {actual:?}")]
    BBoxMismatch { stored: BBox, actual: BBox },
    #[error("unsupported format_version {0}")]
    FormatVersion(u32),
    #[error("movie has no frames")]
    EmptyMovie,
    #[error("frame {frame} has {found} plane references, expected {expected}")]
    PlaneCount { frame: usize, expected: usize, found: usize },
}
