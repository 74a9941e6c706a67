//! Fragmentation focus averaging, the low/high fragmentation gate and
//! per-frame detector routing.

use serde::{Deserialize, Serialize};

use crate::model::StageClass;
use crate::scalar::Real;

/// Embryos scoring below this are treated as low fragmentation.
pub const DEFAULT_FRAGMENTATION_THRESHOLD: f64 = 1.5;

pub const MAX_FRAGMENTATION: f64 = 3.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GatingError {
    #[error("fragmentation score {0} outside [0, 3]")]
    OutOfRange(f64),
    #[error("expected 3 plane scores, got {0}")]
    WrongArity(usize),
    #[error("plane count {0} has no three middle planes")]
    EvenOrTooFew(usize),
    #[error("no fragmentation scores to aggregate")]
    EmptyInput,
}

/// Clinical fragmentation grade on the continuous `[0, 3]` scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FragmentationScore<T: Real>(T);

impl<T: Real> FragmentationScore<T> {
    pub fn new(value: T) -> Result<Self, GatingError> {
        if value >= T::zero() && value <= T::lit(MAX_FRAGMENTATION) {
            Ok(FragmentationScore(value))
        } else {
            Err(GatingError::OutOfRange(value.as_f64()))
        }
    }

    /// Clamps into `[0, 3]`. NaN maps to 0.
    pub fn clamped(value: T) -> Self {
        let v = if value.is_nan() { T::zero() } else { value.max(T::zero()).min(T::lit(MAX_FRAGMENTATION)) };
        FragmentationScore(v)
    }

    pub fn value(self) -> T {
        self.0
    }
}

impl<T: Real> TryFrom<f64> for FragmentationScore<T> {
    type Error = GatingError;

    fn try_from(v: f64) -> Result<Self, GatingError> {
        FragmentationScore::new(T::lit(v))
    }
}

impl<T: Real> From<FragmentationScore<T>> for f64 {
    fn from(s: FragmentationScore<T>) -> f64 {
        s.0.as_f64()
    }
}

/// Mean of the three middle-plane scores.
pub fn average_fragmentation<T: Real>(plane_scores: &[FragmentationScore<T>]) -> Result<FragmentationScore<T>, GatingError> {
    if plane_scores.len() != 3 {
        return Err(GatingError::WrongArity(plane_scores.len()));
    }
    let sum: T = plane_scores.iter().map(|s| s.0).sum();
    Ok(FragmentationScore::clamped(sum / T::lit(3.0)))
}

/// The three centered plane indices (0-based) of an odd plane stack.
pub fn middle_planes(plane_count: usize) -> Result<[usize; 3], GatingError> {
    if plane_count < 3 || plane_count.is_multiple_of(2) {
        return Err(GatingError::EvenOrTooFew(plane_count));
    }
    let mid = plane_count / 2;
    Ok([mid - 1, mid, mid + 1])
}

/// How per-frame scores are combined into the embryo score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct GateDecision<T: Real> {
    pub embryo_score: FragmentationScore<T>,
    pub low_fragmentation: bool,
    pub threshold: T,
}

/// Embryo-level gate. Uses the median of per-frame scores (mean of the
/// middle two for even counts); the embryo is low fragmentation only when
/// strictly below `threshold`.
pub fn gate_embryo<T: Real>(
    per_frame: &[FragmentationScore<T>],
    threshold: T,
) -> Result<GateDecision<T>, GatingError> {
    gate_embryo_with(per_frame, threshold, Aggregation::Median)
}

pub fn gate_embryo_with<T: Real>(
    per_frame: &[FragmentationScore<T>],
    threshold: T,
    aggregation: Aggregation,
) -> Result<GateDecision<T>, GatingError> {
    if per_frame.is_empty() {
        return Err(GatingError::EmptyInput);
    }
    let mut values: Vec<T> = per_frame.iter().map(|s| s.0).collect();
    let score = match aggregation {
        Aggregation::Median => {
            values.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
            let n = values.len();
            if n % 2 == 1 {
                values[n / 2]
            } else {
                (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
            }
        }
        Aggregation::Mean => values.iter().copied().sum::<T>() / T::count(values.len()),
    };
    let embryo_score = FragmentationScore::clamped(score);
    Ok(GateDecision { embryo_score, low_fragmentation: embryo_score.0 < threshold, threshold })
}

/// Detectors to run on a frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub cell_detector: bool,
    pub pronucleus_detector: bool,
}

impl Route {
    pub fn is_empty(self) -> bool {
        !self.cell_detector && !self.pronucleus_detector
    }
}

/// Cells are detected on 1 to 8 cell frames; pronuclei only on 1-cell frames.
pub fn route_frame(decoded: StageClass) -> Route {
    Route {
        cell_detector: decoded.cell_count().is_some(),
        pronucleus_detector: decoded == StageClass::Cell1,
    }
}
