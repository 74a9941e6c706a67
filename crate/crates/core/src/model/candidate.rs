use serde::{Deserialize, Serialize};

use super::{BBox, BinaryMask, ModelError};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Cell,
    Pronucleus,
}

/// One detector output: a scored mask found on a single focal plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CandidateRecord<T>", into = "CandidateRecord<T>")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct InstanceCandidate<T: Real> {
    mask: BinaryMask,
    bbox: BBox,
    confidence: T,
    plane: u8,
    kind: CandidateKind,
}

#[derive(Serialize, Deserialize)]
struct CandidateRecord<T> {
    kind: CandidateKind,
    confidence: T,
    plane: u8,
    bbox: BBox,
    mask: BinaryMask,
}

impl<T: Real> TryFrom<CandidateRecord<T>> for InstanceCandidate<T> {
    type Error = ModelError;

    fn try_from(r: CandidateRecord<T>) -> Result<Self, ModelError> {
        let c = InstanceCandidate::new(r.mask, r.confidence, r.plane, r.kind)?;
        if c.bbox != r.bbox {
            return Err(ModelError::BBoxMismatch { stored: r.bbox, actual: c.bbox });
        }
        Ok(c)
    }
}

impl<T: Real> From<InstanceCandidate<T>> for CandidateRecord<T> {
    fn from(c: InstanceCandidate<T>) -> Self {
        CandidateRecord { kind: c.kind, confidence: c.confidence, plane: c.plane, bbox: c.bbox, mask: c.mask }
    }
}

impl<T: Real> InstanceCandidate<T> {
    /// The bounding box is derived from the mask; the mask must be non-empty
    /// and the confidence in `[0, 1]`.
    pub fn new(mask: BinaryMask, confidence: T, plane: u8, kind: CandidateKind) -> Result<Self, ModelError> {
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(ModelError::ConfidenceRange(confidence.as_f64()));
        }
        let bbox = mask.bbox().ok_or(ModelError::EmptyMask)?;
        Ok(InstanceCandidate { mask, bbox, confidence, plane, kind })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn confidence(&self) -> T {
        self.confidence
    }

    pub fn plane(&self) -> u8 {
        self.plane
    }

    pub fn kind(&self) -> CandidateKind {
        self.kind
    }

    pub fn area(&self) -> usize {
        self.mask.area()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> BinaryMask {
        BinaryMask::from_intervals(4, 4, [(5, 7), (9, 11)]).unwrap()
    }

    #[test]
    fn bbox_is_tight() {
        let c = InstanceCandidate::new(square(), 0.5f64, 3, CandidateKind::Cell).unwrap();
        assert_eq!(c.bbox(), BBox { x: 1, y: 1, w: 2, h: 2 });
        assert_eq!(c.area(), 4);
    }

    #[test]
    fn rejects_bad_confidence_and_empty_masks() {
        assert!(InstanceCandidate::new(square(), 1.5f64, 0, CandidateKind::Cell).is_err());
        assert!(InstanceCandidate::new(square(), f64::NAN, 0, CandidateKind::Cell).is_err());
        let empty = BinaryMask::empty(4, 4).unwrap();
        assert!(matches!(InstanceCandidate::new(empty, 0.5f64, 0, CandidateKind::Cell), Err(ModelError::EmptyMask)));
    }

    #[test]
    fn json_checks_bbox() {
        let c = InstanceCandidate::new(square(), 0.25f64, 2, CandidateKind::Pronucleus).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"pronucleus","confidence":0.25,"plane":2,"bbox":[1,1,2,2],"mask":{"w":4,"h":4,"rle":[5,2,2,2,5]}}"#
        );
        assert_eq!(serde_json::from_str::<InstanceCandidate<f64>>(&json).unwrap(), c);
        let bad = json.replace("[1,1,2,2]", "[0,1,2,2]");
        assert!(serde_json::from_str::<InstanceCandidate<f64>>(&bad).is_err());
    }
}
