//! Label-noise-aware stage loss.
//!
//! The model's prediction `p(t | m)` is pushed through the human labelling
//! noise `p(l | t)` before scoring the observed label:
//! `log p(l | m) = log sum_t p(l | t) p(t | m)`.

use serde::{Deserialize, Serialize};

use crate::model::{ConfusionMatrix, ProbVector13, StageClass, STAGE_COUNT};
use crate::scalar::Real;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SoftLossError {
    #[error("no triplicate record has a majority label")]
    EmptyInput,
    #[error("label {label} has zero likelihood under the prediction")]
    ZeroLikelihood { label: StageClass },
    #[error("loss batch is empty")]
    EmptyBatch,
}

/// Three independent human labels for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplicateRecord {
    pub image_id: String,
    pub labels: [StageClass; 3],
}

impl TriplicateRecord {
    pub fn new(image_id: impl Into<String>, labels: [StageClass; 3]) -> Self {
        TriplicateRecord { image_id: image_id.into(), labels }
    }

    /// The label at least two annotators agree on.
    pub fn majority(&self) -> Option<StageClass> {
        let [a, b, c] = self.labels;
        if a == b || a == c {
            Some(a)
        } else if b == c {
            Some(b)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplicateLabelSet {
    pub records: Vec<TriplicateRecord>,
}

/// Confusion estimate plus bookkeeping about skipped records.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionEstimate<T: Real> {
    pub matrix: ConfusionMatrix<T>,
    /// Records with three distinct labels, left out of the estimate.
    pub no_majority: usize,
    /// Records that contributed.
    pub used: usize,
}

/// Estimates `p(l | t)` from triplicate labels, taking the majority vote as
/// the true class. Classes that never win a vote keep an identity row.
pub fn estimate_confusion<T: Real>(labels: &TriplicateLabelSet) -> Result<ConfusionEstimate<T>, SoftLossError> {
    let mut counts = [[0usize; STAGE_COUNT]; STAGE_COUNT];
    let mut no_majority = 0;
    let mut used = 0;
    for record in &labels.records {
        let Some(truth) = record.majority() else {
            no_majority += 1;
            continue;
        };
        used += 1;
        for l in record.labels {
            counts[truth.index()][l.index()] += 1;
        }
    }
    if used == 0 {
        return Err(SoftLossError::EmptyInput);
    }

    let mut matrix = ConfusionMatrix::identity();
    for truth in StageClass::ALL {
        let row = &counts[truth.index()];
        let total: usize = row.iter().sum();
        if total == 0 {
            continue;
        }
        let raw = std::array::from_fn(|l| T::count(row[l]) / T::count(total));
        let row = ProbVector13::new(raw).expect("count frequencies form a distribution");
        matrix = matrix.with_row(truth, row);
    }
    Ok(ConfusionEstimate { matrix, no_majority, used })
}

/// `log sum_t q[t][label] * prediction[t]` (natural log). Never positive.
pub fn soft_log_likelihood<T: Real>(
    label: StageClass,
    prediction: &ProbVector13<T>,
    confusion: &ConfusionMatrix<T>,
) -> Result<T, SoftLossError> {
    let likelihood = label_likelihood(label, prediction, confusion);
    if likelihood <= T::zero() {
        return Err(SoftLossError::ZeroLikelihood { label });
    }
    // Rounding can push the sum a hair above one.
    Ok(likelihood.ln().min(T::zero()))
}

/// `p(label | m)` before taking the log.
pub fn label_likelihood<T: Real>(label: StageClass, prediction: &ProbVector13<T>, confusion: &ConfusionMatrix<T>) -> T {
    StageClass::ALL.iter().map(|&t| confusion.get(t, label) * prediction[t]).sum()
}

/// Mean negative soft log-likelihood over a batch.
pub fn mean_soft_loss<T: Real>(
    batch: &[(StageClass, ProbVector13<T>)],
    confusion: &ConfusionMatrix<T>,
) -> Result<T, SoftLossError> {
    if batch.is_empty() {
        return Err(SoftLossError::EmptyBatch);
    }
    let mut total = T::zero();
    for (label, prediction) in batch {
        total = total - soft_log_likelihood(*label, prediction, confusion)?;
    }
    Ok(total / T::count(batch.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use StageClass::*;

    fn record(labels: [StageClass; 3]) -> TriplicateRecord {
        TriplicateRecord::new("img", labels)
    }

    #[test]
    fn unanimous_labels_give_certain_row() {
        let set = TriplicateLabelSet { records: vec![record([Cell1, Cell1, Cell1]); 10] };
        let est = estimate_confusion::<f64>(&set).unwrap();
        assert_eq!(est.matrix.get(Cell1, Cell1), 1.0);
        assert_eq!(est.used, 10);
    }

    #[test]
    fn two_to_one_split_counts_each_label() {
        // 9 labels: six Cell6, three Cell7, truth Cell6.
        let set = TriplicateLabelSet { records: vec![record([Cell6, Cell6, Cell7]); 3] };
        let est = estimate_confusion::<f64>(&set).unwrap();
        assert!((est.matrix.get(Cell6, Cell6) - 2.0 / 3.0).abs() < 1e-15);
        assert!((est.matrix.get(Cell6, Cell7) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(est.matrix.get(Cell7, Cell7), 1.0);
    }

    #[test]
    fn majority_may_be_any_position() {
        assert_eq!(record([Cell2, Cell3, Cell3]).majority(), Some(Cell3));
        assert_eq!(record([Cell3, Cell2, Cell3]).majority(), Some(Cell3));
        assert_eq!(record([Cell1, Cell2, Cell3]).majority(), None);
    }

    #[test]
    fn three_way_ties_are_skipped() {
        let set = TriplicateLabelSet { records: vec![record([Cell1, Cell2, Cell3]), record([Morula, Morula, Blastocyst])] };
        let est = estimate_confusion::<f64>(&set).unwrap();
        assert_eq!(est.no_majority, 1);
        assert_eq!(est.used, 1);
        assert_eq!(est.matrix.get(Cell1, Cell1), 1.0);

        let only_ties = TriplicateLabelSet { records: vec![record([Cell1, Cell2, Cell3])] };
        assert_eq!(estimate_confusion::<f64>(&only_ties).unwrap_err(), SoftLossError::EmptyInput);
    }

    #[test]
    fn identity_confusion_reduces_to_cross_entropy() {
        let raw = [0.05, 0.4, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05];
        let p = ProbVector13::<f64>::new(raw).unwrap();
        let ll = soft_log_likelihood(Cell2, &p, &ConfusionMatrix::identity()).unwrap();
        assert!((ll - 0.4f64.ln()).abs() < 1e-12);
        let one_hot = ProbVector13::<f64>::one_hot(Cell8);
        assert_eq!(soft_log_likelihood(Cell8, &one_hot, &ConfusionMatrix::identity()).unwrap(), 0.0);
    }

    #[test]
    fn unreachable_label_is_an_error() {
        let p = ProbVector13::<f64>::one_hot(Cell1);
        assert_eq!(
            soft_log_likelihood(Cell2, &p, &ConfusionMatrix::identity()),
            Err(SoftLossError::ZeroLikelihood { label: Cell2 })
        );
    }

    #[test]
    fn noisy_confusion_keeps_zero_probability_labels_finite() {
        let mut row = [0.0f64; 13];
        row[Cell6.index()] = 0.907;
        row[Cell7.index()] = 0.093;
        let q = ConfusionMatrix::identity().with_row(Cell6, ProbVector13::new(row).unwrap());
        let p = ProbVector13::one_hot(Cell6);
        let ll = soft_log_likelihood(Cell7, &p, &q).unwrap();
        assert!((ll - 0.093f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_loss_of_batch() {
        let q = ConfusionMatrix::<f64>::identity();
        let with_mass = |m: f64| {
            let mut raw = [(1.0 - m) / 12.0; 13];
            raw[0] = m;
            ProbVector13::new(raw).unwrap()
        };
        let batch = [(Cell1, with_mass((-1.0f64).exp())), (Cell1, with_mass((-3.0f64).exp()))];
        assert!((mean_soft_loss(&batch, &q).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(mean_soft_loss::<f64>(&[], &q), Err(SoftLossError::EmptyBatch));
        let single = [(Cell1, with_mass(0.3))];
        let expected = -soft_log_likelihood(Cell1, &single[0].1, &q).unwrap();
        assert_eq!(mean_soft_loss(&single, &q).unwrap(), expected);
    }
}
