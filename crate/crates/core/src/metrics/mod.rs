//! Evaluation metrics: segmentation pixel accuracy, fragmentation error and
//! agreement, stage accuracy and confusion, and instance-level detection
//! scores.

mod instance;

pub use instance::{
    area_ratio_stats, average_precision_at, average_precision_curve, average_precision_from_flags, match_instances, mean_average_precision,
    precision_recall, AreaRatios, ImageInstances, MatchPair, MatchResult, MAP_IOU_THRESHOLDS,
};

use serde::{Deserialize, Serialize};

use crate::model::{SegmentationMap, StageClass, ZonaClass, STAGE_COUNT};
use crate::scalar::{ratio, Real};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("fragmentation grade {0} outside 0..=3")]
    InvalidGrade(u8),
    #[error("no ground-truth instances")]
    NoTruths,
    #[error("no matched instances")]
    EmptyMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelAccuracy<T: Real> {
    pub overall: T,
    /// Recall of each zona class; `None` when the class is absent from the truth.
    pub per_class: [Option<T>; 4],
}

impl<T: Real> PixelAccuracy<T> {
    pub fn class(&self, class: ZonaClass) -> Option<T> {
        self.per_class[class.index()]
    }
}

/// Raw pixel agreement counts; summable across frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub correct: [usize; 4],
    pub total: [usize; 4],
}

impl PixelCounts {
    pub fn tally(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<Self, MetricsError> {
        if pred.dims() != truth.dims() {
            return Err(MetricsError::DimensionMismatch { left: pred.dims(), right: truth.dims() });
        }
        let mut counts = PixelCounts::default();
        for (p, t) in pred.labels().iter().zip(truth.labels()) {
            counts.total[t.index()] += 1;
            if p == t {
                counts.correct[t.index()] += 1;
            }
        }
        Ok(counts)
    }

    pub fn add(&mut self, other: &PixelCounts) {
        for c in 0..4 {
            self.correct[c] += other.correct[c];
            self.total[c] += other.total[c];
        }
    }

    pub fn accuracy<T: Real>(&self) -> Option<PixelAccuracy<T>> {
        let overall = ratio(self.correct.iter().sum(), self.total.iter().sum())?;
        Some(PixelAccuracy { overall, per_class: std::array::from_fn(|c| ratio(self.correct[c], self.total[c])) })
    }
}

/// Fraction of pixels labelled correctly, overall and per true class.
pub fn pixel_accuracy<T: Real>(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<PixelAccuracy<T>, MetricsError> {
    PixelCounts::tally(pred, truth)?.accuracy().ok_or(MetricsError::EmptyInput)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentationAgreement<T: Real> {
    /// Mean absolute deviation from the integer grades.
    pub mad: T,
    /// Fraction of frames where prediction and label fall on the same side
    /// of the threshold.
    pub agreement: T,
}

pub fn fragmentation_metrics<T: Real>(
    preds: &[T],
    labels: &[u8],
    threshold: T,
) -> Result<FragmentationAgreement<T>, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut abs = T::zero();
    let mut agree = 0;
    for (&p, &l) in preds.iter().zip(labels) {
        if l > 3 {
            return Err(MetricsError::InvalidGrade(l));
        }
        let l = T::count(l as usize);
        abs = abs + (p - l).abs();
        if (p < threshold) == (l < threshold) {
            agree += 1;
        }
    }
    let n = T::count(preds.len());
    Ok(FragmentationAgreement { mad: abs / n, agreement: T::count(agree) / n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics<T: Real> {
    pub accuracy: T,
    /// `confusion[t][p]`: fraction of true-`t` frames predicted `p`;
    /// `None` for classes absent from the truth.
    pub confusion: [Option<[T; STAGE_COUNT]>; STAGE_COUNT],
}

impl<T: Real> StageMetrics<T> {
    pub fn row(&self, truth: StageClass) -> Option<&[T; STAGE_COUNT]> {
        self.confusion[truth.index()].as_ref()
    }
}

/// Exact-match accuracy and the row-normalized confusion distribution.
pub fn stage_metrics<T: Real>(decoded: &[StageClass], truth: &[StageClass]) -> Result<StageMetrics<T>, MetricsError> {
    if decoded.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { left: decoded.len(), right: truth.len() });
    }
    if decoded.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut counts = [[0usize; STAGE_COUNT]; STAGE_COUNT];
    let mut hits = 0;
    for (&p, &t) in decoded.iter().zip(truth) {
        counts[t.index()][p.index()] += 1;
        if p == t {
            hits += 1;
        }
    }
    let confusion = std::array::from_fn(|t| {
        let total: usize = counts[t].iter().sum();
        (total > 0).then(|| std::array::from_fn(|p| T::count(counts[t][p]) / T::count(total)))
    });
    Ok(StageMetrics { accuracy: T::count(hits) / T::count(decoded.len()), confusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use StageClass::*;

    fn map(labels: &[u8], w: u32) -> SegmentationMap {
        let labels = labels.iter().map(|&l| ZonaClass::from_index(l as usize).unwrap()).collect::<Vec<_>>();
        let h = labels.len() as u32 / w;
        SegmentationMap::new(w, h, labels).unwrap()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let m = map(&[0, 1, 2, 3, 3, 2], 3);
        let acc = pixel_accuracy::<f64>(&m, &m).unwrap();
        assert_eq!(acc.overall, 1.0);
        assert_eq!(acc.per_class, [Some(1.0); 4]);
    }

    #[test]
    fn half_of_one_class_flipped() {
        let truth = map(&[2, 2, 2, 2, 0, 1], 3);
        let pred = map(&[2, 3, 2, 3, 0, 1], 3);
        let acc = pixel_accuracy::<f64>(&pred, &truth).unwrap();
        assert_eq!(acc.class(ZonaClass::Zona), Some(0.5));
        assert_eq!(acc.class(ZonaClass::InsideZona), None);
        assert_eq!(acc.class(ZonaClass::OutsideWell), Some(1.0));
    }

    #[test]
    fn three_of_four_pixels() {
        let acc = pixel_accuracy::<f64>(&map(&[0, 1, 2, 3], 2), &map(&[0, 1, 2, 2], 2)).unwrap();
        assert_eq!(acc.overall, 0.75);
        let bad = pixel_accuracy::<f64>(&map(&[0, 1, 2, 3], 2), &map(&[0, 1, 2, 3], 4));
        assert!(matches!(bad, Err(MetricsError::DimensionMismatch { .. })));
    }

    #[test]
    fn fragmentation_examples() {
        let exact = fragmentation_metrics(&[0.0, 1.0, 3.0], &[0, 1, 3], 1.5).unwrap();
        assert_eq!((exact.mad, exact.agreement), (0.0, 1.0));
        let shifted = fragmentation_metrics::<f64>(&[0.5, 1.5, 2.5], &[0, 1, 2], 1.5).unwrap();
        assert!((shifted.mad - 0.5).abs() < 1e-15);
        let mixed = fragmentation_metrics::<f64>(&[0.2, 2.8], &[1, 1], 1.5).unwrap();
        assert!((mixed.mad - 1.3).abs() < 1e-15);
        assert_eq!(mixed.agreement, 0.5);
        assert_eq!(fragmentation_metrics::<f64>(&[], &[], 1.5), Err(MetricsError::EmptyInput));
        assert!(matches!(fragmentation_metrics(&[1.0], &[1, 2], 1.5), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(fragmentation_metrics(&[1.0], &[4], 1.5), Err(MetricsError::InvalidGrade(4)));
    }

    #[test]
    fn stage_examples() {
        let truth = [Cell1, Cell2, Morula];
        let m = stage_metrics::<f64>(&truth, &truth).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.row(Cell2).unwrap()[Cell2.index()], 1.0);
        assert!(m.row(Cell3).is_none());

        let m = stage_metrics::<f64>(&[Cell2, Cell3, Cell2, Cell3], &[Cell2; 4]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        let row = m.row(Cell2).unwrap();
        assert_eq!((row[Cell2.index()], row[Cell3.index()]), (0.5, 0.5));
        assert!(m.row(Cell3).is_none());
    }

    proptest! {
        #[test]
        fn overall_is_frequency_weighted_class_mean(
            pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..80)
        ) {
            let pred: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let w = pairs.len() as u32;
            let acc = pixel_accuracy::<f64>(&map(&pred, w), &map(&truth, w)).unwrap();
            let n = pairs.len() as f64;
            let weighted: f64 = ZonaClass::ALL
                .iter()
                .filter_map(|&c| {
                    let freq = truth.iter().filter(|&&t| t as usize == c.index()).count() as f64 / n;
                    acc.class(c).map(|a| a * freq)
                })
                .sum();
            prop_assert!((weighted - acc.overall).abs() < 1e-12);
        }

        #[test]
        fn agreement_invariant_under_threshold_fixing_monotone_map(
            data in proptest::collection::vec((0.0f64..3.0, 0u8..4), 1..50),
            k in 0.2f64..5.0,
        ) {
            // x -> 1.5 + k (x - 1.5) is strictly increasing and fixes 1.5.
            let f = |x: f64| 1.5 + k * (x - 1.5);
            let preds: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            let base = fragmentation_metrics(&preds, &labels, 1.5).unwrap().agreement;
            let agree = preds.iter().zip(&labels)
                .filter(|(p, l)| (f(**p) < 1.5) == (f(**l as f64) < 1.5))
                .count() as f64 / preds.len() as f64;
            prop_assert_eq!(base, agree);
        }
    }
}
