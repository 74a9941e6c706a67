//! Pluggable providers for the five networks.
//!
//! Backends are pulled one frame (and plane) at a time and must be
//! deterministic for a given input, so callers may cache results.

use crate::geometry::Roi;
use crate::model::{CandidateKind, MovieFrame, SegmentationMap};
use crate::{Candidate, ProbVector};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

impl BackendError {
    pub fn new(msg: impl Into<String>) -> Self {
        BackendError(msg.into())
    }
}

/// A movie frame as seen by a backend.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub index: usize,
    pub frame: &'a MovieFrame,
}

impl FrameRef<'_> {
    pub fn t(&self) -> f64 {
        self.frame.t
    }
}

/// Full-image 4-class zona segmentation.
pub trait ZonaSegmenter: Sync {
    fn segment(&self, frame: FrameRef<'_>, plane: usize) -> Result<SegmentationMap, BackendError>;
}

/// Single-plane fragmentation regression on the ROI crop.
pub trait FragmentationScorer: Sync {
    fn score(&self, frame: FrameRef<'_>, plane: usize, roi: &Roi) -> Result<f64, BackendError>;
}

/// 13-class stage probabilities from a stack of planes.
pub trait StageClassifier: Sync {
    fn classify(&self, frame: FrameRef<'_>, planes: &[usize], roi: &Roi) -> Result<ProbVector, BackendError>;
}

/// Instance detector over the ROI of one plane. Masks are returned in
/// full-image coordinates.
pub trait InstanceDetector: Sync {
    fn detect(&self, kind: CandidateKind, frame: FrameRef<'_>, plane: usize, roi: &Roi) -> Result<Vec<Candidate>, BackendError>;
}

/// One provider per network.
#[derive(Clone, Copy)]
pub struct BackendSuite<'a> {
    pub zona: &'a dyn ZonaSegmenter,
    pub fragmentation: &'a dyn FragmentationScorer,
    pub stage: &'a dyn StageClassifier,
    pub cells: &'a dyn InstanceDetector,
    pub pronuclei: &'a dyn InstanceDetector,
}

impl<'a> BackendSuite<'a> {
    /// Uses one object for all five networks.
    pub fn uniform<B>(backend: &'a B) -> Self
    where
        B: ZonaSegmenter + FragmentationScorer + StageClassifier + InstanceDetector,
    {
        BackendSuite { zona: backend, fragmentation: backend, stage: backend, cells: backend, pronuclei: backend }
    }
}
