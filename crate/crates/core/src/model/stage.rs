use std::cmp::Ordering;
use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::scalar::Real;

/// Number of stage classes emitted by a stage classifier.
pub const STAGE_COUNT: usize = 13;

/// Number of classes that take part in the developmental order.
pub const ORDERED_STAGE_COUNT: usize = 11;

const NORMALIZATION_TOLERANCE: f64 = 1e-6;
const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Developmental stage of an embryo in one frame.
///
/// The discriminant is the canonical index used in every serialized vector
/// and matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageClass {
    Cell1 = 0,
    Cell2 = 1,
    Cell3 = 2,
    Cell4 = 3,
    Cell5 = 4,
    Cell6 = 5,
    Cell7 = 6,
    Cell8 = 7,
    Cell9Plus = 8,
    Morula = 9,
    Blastocyst = 10,
    Empty = 11,
    Degenerate = 12,
}

impl StageClass {
    pub const ALL: [StageClass; STAGE_COUNT] = [
        StageClass::Cell1,
        StageClass::Cell2,
        StageClass::Cell3,
        StageClass::Cell4,
        StageClass::Cell5,
        StageClass::Cell6,
        StageClass::Cell7,
        StageClass::Cell8,
        StageClass::Cell9Plus,
        StageClass::Morula,
        StageClass::Blastocyst,
        StageClass::Empty,
        StageClass::Degenerate,
    ];

    /// The developmental classes, in developmental order.
    pub const ORDERED: [StageClass; ORDERED_STAGE_COUNT] = [
        StageClass::Cell1,
        StageClass::Cell2,
        StageClass::Cell3,
        StageClass::Cell4,
        StageClass::Cell5,
        StageClass::Cell6,
        StageClass::Cell7,
        StageClass::Cell8,
        StageClass::Cell9Plus,
        StageClass::Morula,
        StageClass::Blastocyst,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<StageClass> {
        Self::ALL.get(index).copied()
    }

    /// Whether the class takes part in the developmental order
    /// (everything except `Empty` and `Degenerate`).
    pub fn is_ordered(self) -> bool {
        self.index() < ORDERED_STAGE_COUNT
    }

    /// `Empty` or `Degenerate`.
    pub fn is_excluded(self) -> bool {
        !self.is_ordered()
    }

    /// Countable blastomeres for `Cell1`..`Cell8`.
    pub fn cell_count(self) -> Option<usize> {
        (self.index() < 8).then(|| self.index() + 1)
    }

    /// Cleavage stage: `Cell1` through `Cell9Plus`.
    pub fn is_cleavage(self) -> bool {
        self.index() <= StageClass::Cell9Plus.index()
    }

    /// Class for a given number of countable cells (1..=8).
    pub fn from_cell_count(cells: usize) -> Option<StageClass> {
        (1..=8).contains(&cells).then(|| Self::ALL[cells - 1])
    }

    pub fn name(self) -> &'static str {
        match self {
            StageClass::Cell1 => "Cell1",
            StageClass::Cell2 => "Cell2",
            StageClass::Cell3 => "Cell3",
            StageClass::Cell4 => "Cell4",
            StageClass::Cell5 => "Cell5",
            StageClass::Cell6 => "Cell6",
            StageClass::Cell7 => "Cell7",
            StageClass::Cell8 => "Cell8",
            StageClass::Cell9Plus => "Cell9Plus",
            StageClass::Morula => "Morula",
            StageClass::Blastocyst => "Blastocyst",
            StageClass::Empty => "Empty",
            StageClass::Degenerate => "Degenerate",
        }
    }
}

impl fmt::Display for StageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Developmental order. `Empty` and `Degenerate` compare equal only to
/// themselves and are incomparable with every other class.
impl PartialOrd for StageClass {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self == other {
            Some(Ordering::Equal)
        } else if self.is_ordered() && other.is_ordered() {
            Some(self.index().cmp(&other.index()))
        } else {
            None
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A 13-class probability vector in canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct ProbVector13<T: Real>([T; STAGE_COUNT]);

impl<T: Real> ProbVector13<T> {
    /// Validates raw classifier output.
    ///
    /// Entries down to `-1e-9` are clamped to zero; the sum must be within
    /// `1e-6` of one and is renormalized to one.
    pub fn new(raw: [T; STAGE_COUNT]) -> Result<Self, ModelError> {
        validate_prob_vector(&raw)
    }

    pub fn one_hot(class: StageClass) -> Self {
        let mut p = [T::zero(); STAGE_COUNT];
        p[class.index()] = T::one();
        ProbVector13(p)
    }

    pub fn uniform() -> Self {
        ProbVector13([T::one() / T::count(STAGE_COUNT); STAGE_COUNT])
    }

    pub fn get(&self, class: StageClass) -> T {
        self.0[class.index()]
    }

    pub fn as_array(&self) -> &[T; STAGE_COUNT] {
        &self.0
    }

    /// Most probable class over all 13 entries, lowest index on ties.
    pub fn argmax(&self) -> StageClass {
        StageClass::ALL[argmax(&self.0)]
    }

    pub fn sum(&self) -> T {
        self.0.iter().copied().sum()
    }
}

impl<T: Real> Index<StageClass> for ProbVector13<T> {
    type Output = T;

    fn index(&self, class: StageClass) -> &T {
        &self.0[class.index()]
    }
}

impl<T: Real> TryFrom<Vec<T>> for ProbVector13<T> {
    type Error = ModelError;

    fn try_from(raw: Vec<T>) -> Result<Self, ModelError> {
        let arr: [T; STAGE_COUNT] = raw
            .try_into()
            .map_err(|v: Vec<T>| ModelError::WrongLength { expected: STAGE_COUNT, found: v.len() })?;
        validate_prob_vector(&arr)
    }
}

impl<T: Real> From<ProbVector13<T>> for Vec<T> {
    fn from(p: ProbVector13<T>) -> Vec<T> {
        p.0.to_vec()
    }
}

/// Accepts a raw 13-entry vector as a probability vector.
///
/// Negative entries within `1e-9` of zero are clamped, and the result is
/// renormalized so it sums to one. Applying it to its own output is a no-op.
pub fn validate_prob_vector<T: Real>(raw: &[T; STAGE_COUNT]) -> Result<ProbVector13<T>, ModelError> {
    let mut p = *raw;
    for (index, v) in p.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(ModelError::NonFinite { index });
        }
        if *v < -T::lit(NEGATIVE_TOLERANCE) {
            return Err(ModelError::NegativeEntry { index, value: v.as_f64() });
        }
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    let sum: T = p.iter().copied().sum();
    if (sum - T::one()).abs() > T::lit(NORMALIZATION_TOLERANCE) {
        return Err(ModelError::NotNormalized { sum: sum.as_f64() });
    }
    // Sums already equal to one up to rounding are left untouched.
    if (sum - T::one()).abs() > T::lit(64.0) * T::epsilon() {
        for v in p.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(ProbVector13(p))
}

/// Per-frame stage probabilities over a movie.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Real + Serialize"))]
pub struct StageProbabilityMatrix<T: Real> {
    rows: Vec<ProbVector13<T>>,
    /// Frame timestamps in minutes.
    times: Vec<f64>,
}

impl<T: Real> StageProbabilityMatrix<T> {
    pub fn new(rows: Vec<ProbVector13<T>>, times: Vec<f64>) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyMatrix);
        }
        if rows.len() != times.len() {
            return Err(ModelError::LengthMismatch { left: rows.len(), right: times.len() });
        }
        check_increasing(&times)?;
        Ok(StageProbabilityMatrix { rows, times })
    }

    /// Matrix over frames `0, 20, 40, ...` minutes.
    pub fn with_uniform_cadence(rows: Vec<ProbVector13<T>>, cadence_minutes: f64) -> Result<Self, ModelError> {
        let times = (0..rows.len()).map(|i| i as f64 * cadence_minutes).collect();
        Self::new(rows, times)
    }

    pub fn rows(&self) -> &[ProbVector13<T>] {
        &self.rows
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Raw score rows, as consumed by the decoders.
    pub fn score_rows(&self) -> Vec<[T; STAGE_COUNT]> {
        self.rows.iter().map(|r| *r.as_array()).collect()
    }
}

pub(crate) fn check_increasing(times: &[f64]) -> Result<(), ModelError> {
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(ModelError::TimesNotIncreasing { index: i + 1 });
        }
    }
    Ok(())
}

/// Label-noise model: `q[t][l]` is the probability that a human labels an
/// image of true class `t` as `l`. Rows are indexed by the true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct ConfusionMatrix<T: Real> {
    rows: [ProbVector13<T>; STAGE_COUNT],
}

impl<T: Real> ConfusionMatrix<T> {
    pub fn identity() -> Self {
        ConfusionMatrix { rows: StageClass::ALL.map(ProbVector13::one_hot) }
    }

    pub fn from_rows(rows: [ProbVector13<T>; STAGE_COUNT]) -> Self {
        ConfusionMatrix { rows }
    }

    pub fn from_raw(raw: [[T; STAGE_COUNT]; STAGE_COUNT]) -> Result<Self, ModelError> {
        let mut rows = [ProbVector13::one_hot(StageClass::Cell1); STAGE_COUNT];
        for (t, r) in raw.iter().enumerate() {
            rows[t] = validate_prob_vector(r).map_err(|e| ModelError::InvalidRow { row: t, source: Box::new(e) })?;
        }
        Ok(ConfusionMatrix { rows })
    }

    /// `p(label | truth)`.
    pub fn get(&self, truth: StageClass, label: StageClass) -> T {
        self.rows[truth.index()][label]
    }

    pub fn row(&self, truth: StageClass) -> &ProbVector13<T> {
        &self.rows[truth.index()]
    }

    /// Returns a copy whose row for `truth` is replaced.
    pub fn with_row(mut self, truth: StageClass, row: ProbVector13<T>) -> Self {
        self.rows[truth.index()] = row;
        self
    }
}

impl<T: Real> TryFrom<Vec<Vec<T>>> for ConfusionMatrix<T> {
    type Error = ModelError;

    fn try_from(raw: Vec<Vec<T>>) -> Result<Self, ModelError> {
        if raw.len() != STAGE_COUNT {
            return Err(ModelError::WrongLength { expected: STAGE_COUNT, found: raw.len() });
        }
        let mut arr = [[T::zero(); STAGE_COUNT]; STAGE_COUNT];
        for (t, row) in raw.into_iter().enumerate() {
            arr[t] = row
                .try_into()
                .map_err(|v: Vec<T>| ModelError::WrongLength { expected: STAGE_COUNT, found: v.len() })?;
        }
        Self::from_raw(arr)
    }
}

impl<T: Real> From<ConfusionMatrix<T>> for Vec<Vec<T>> {
    fn from(m: ConfusionMatrix<T>) -> Self {
        m.rows.iter().map(|r| r.as_array().to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirteen_classes_in_canonical_order() {
        assert_eq!(StageClass::ALL.len(), 13);
        for (i, c) in StageClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(StageClass::from_index(i), Some(*c));
        }
        assert_eq!(StageClass::from_index(13), None);
    }

    #[test]
    fn order_excludes_empty_and_degenerate() {
        assert!(StageClass::Cell1 < StageClass::Cell2);
        assert!(StageClass::Morula < StageClass::Blastocyst);
        assert_eq!(StageClass::Empty.partial_cmp(&StageClass::Cell1), None);
        assert_eq!(StageClass::Cell1.partial_cmp(&StageClass::Degenerate), None);
        assert_eq!(StageClass::Empty.partial_cmp(&StageClass::Empty), Some(Ordering::Equal));
    }

    #[test]
    fn one_hot_is_accepted_unchanged() {
        let mut raw = [0.0f64; 13];
        raw[0] = 1.0;
        let p = validate_prob_vector(&raw).unwrap();
        assert_eq!(p.as_array(), &raw);
    }

    #[test]
    fn uniform_is_accepted() {
        let raw = [1.0f64 / 13.0; 13];
        let p = validate_prob_vector(&raw).unwrap();
        assert_eq!(p.as_array(), &raw);
    }

    #[test]
    fn all_zero_is_not_normalized() {
        let raw = [0.0f64; 13];
        assert!(matches!(validate_prob_vector(&raw), Err(ModelError::NotNormalized { .. })));
    }

    #[test]
    fn small_negatives_clamp_large_negatives_fail() {
        let mut raw = [0.0f64; 13];
        raw[0] = 1.0;
        raw[3] = -5e-10;
        let p = validate_prob_vector(&raw).unwrap();
        assert_eq!(p[StageClass::Cell4], 0.0);

        raw[3] = -1e-3;
        raw[0] = 1.001;
        assert!(matches!(validate_prob_vector(&raw), Err(ModelError::NegativeEntry { index: 3, .. })));
    }

    #[test]
    fn slightly_off_sum_is_renormalized() {
        let mut raw = [0.0f64; 13];
        raw[0] = 0.5 + 4e-7;
        raw[1] = 0.5;
        let p = validate_prob_vector(&raw).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-15);
        assert!(p[StageClass::Cell1] > p[StageClass::Cell2]);
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut raw = [0.0f64; 13];
        raw[2] = f64::NAN;
        assert!(matches!(validate_prob_vector(&raw), Err(ModelError::NonFinite { index: 2 })));
    }

    #[test]
    fn matrix_requires_increasing_times() {
        let rows = vec![ProbVector13::<f64>::uniform(); 3];
        assert!(StageProbabilityMatrix::new(rows.clone(), vec![0.0, 20.0, 40.0]).is_ok());
        assert!(matches!(
            StageProbabilityMatrix::new(rows.clone(), vec![0.0, 20.0, 20.0]),
            Err(ModelError::TimesNotIncreasing { index: 2 })
        ));
        assert!(StageProbabilityMatrix::new(rows, vec![0.0]).is_err());
        assert!(StageProbabilityMatrix::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn confusion_matrix_json_is_rows_of_true_class() {
        let m = ConfusionMatrix::<f64>::identity();
        let json = serde_json::to_string(&m).unwrap();
        let back: ConfusionMatrix<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let raw: Vec<Vec<f64>> = serde_json::from_str(&json).unwrap();
        assert_eq!(raw.len(), 13);
        assert_eq!(raw[5][5], 1.0);
    }

    #[test]
    fn confusion_matrix_rejects_bad_rows() {
        let mut raw = vec![vec![0.0f64; 13]; 13];
        for (i, r) in raw.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        raw[4][4] = 0.5;
        let err = serde_json::from_str::<ConfusionMatrix<f64>>(&serde_json::to_string(&raw).unwrap());
        assert!(err.is_err());
    }

    #[test]
    fn works_for_f32() {
        let p = ProbVector13::<f32>::new([1.0 / 13.0; 13]).unwrap();
        assert_eq!(p.argmax(), StageClass::Cell1);
    }
}
