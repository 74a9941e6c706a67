//! Monotone stage-trajectory decoding.
//!
//! Frames whose overall argmax is `Empty` or `Degenerate` are excluded and
//! keep their argmax. The remaining frames are decoded to the
//! non-decreasing sequence over the 11 developmental classes that maximizes
//! the summed log probability. Rows are not renormalized after dropping the
//! two excluded classes.

use serde::{Deserialize, Serialize};

use crate::model::{argmax, StageClass, StageProbabilityMatrix, ORDERED_STAGE_COUNT, STAGE_COUNT};
use crate::scalar::Real;

/// Longest movie the exhaustive decoder accepts.
pub const BRUTE_FORCE_MAX_FRAMES: usize = 12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecodeError {
    #[error("every frame is empty or degenerate")]
    AllExcluded,
    #[error("frame {frame} has no probability mass on any developmental class")]
    ZeroRow { frame: usize },
    #[error("no non-decreasing trajectory has positive probability")]
    NoFeasiblePath,
    #[error("{frames} frames exceed the exhaustive-search limit of {BRUTE_FORCE_MAX_FRAMES}")]
    TooLong { frames: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDecode {
    pub argmax: StageClass,
    pub decoded: StageClass,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult<T: Real> {
    pub frames: Vec<FrameDecode>,
    /// Summed natural-log probability of the decoded classes over
    /// non-excluded frames, accumulated in frame order.
    pub path_log_score: T,
}

impl<T: Real> TrajectoryResult<T> {
    pub fn decoded(&self) -> Vec<StageClass> {
        self.frames.iter().map(|f| f.decoded).collect()
    }
}

/// Per-frame argmax over all 13 classes, lowest index on ties.
pub fn argmax_trajectory<T: Real>(matrix: &StageProbabilityMatrix<T>) -> Vec<StageClass> {
    argmax_rows(&matrix.score_rows())
}

pub fn argmax_rows<T: Real>(rows: &[[T; STAGE_COUNT]]) -> Vec<StageClass> {
    rows.iter().map(|r| StageClass::ALL[argmax(r)]).collect()
}

/// `true` for frames whose argmax is `Empty` or `Degenerate`.
pub fn exclude_frames<T: Real>(matrix: &StageProbabilityMatrix<T>) -> Vec<bool> {
    exclude_rows(&matrix.score_rows())
}

pub fn exclude_rows<T: Real>(rows: &[[T; STAGE_COUNT]]) -> Vec<bool> {
    argmax_rows(rows).into_iter().map(StageClass::is_excluded).collect()
}

/// Most likely non-decreasing trajectory, in `O(frames * 11)`.
///
/// Among equally scored trajectories the lexicographically smallest class
/// sequence wins, i.e. every transition happens as late as possible.
pub fn decode_monotone<T: Real>(matrix: &StageProbabilityMatrix<T>) -> Result<TrajectoryResult<T>, DecodeError> {
    decode_rows(&matrix.score_rows())
}

/// [`decode_monotone`] over raw, possibly unnormalized, non-negative rows.
pub fn decode_rows<T: Real>(rows: &[[T; STAGE_COUNT]]) -> Result<TrajectoryResult<T>, DecodeError> {
    let (argmaxes, active, logs) = prepare(rows)?;
    let n = active.len();

    // suffix[i][s]: best score of frames i.. given frame i takes class s.
    let mut suffix = vec![[T::neg_infinity(); ORDERED_STAGE_COUNT]; n];
    for i in (0..n).rev() {
        let mut best_later = T::neg_infinity();
        for s in (0..ORDERED_STAGE_COUNT).rev() {
            let tail = if i + 1 < n {
                best_later = best_later.max(suffix[i + 1][s]);
                best_later
            } else {
                T::zero()
            };
            suffix[i][s] = logs[i][s] + tail;
        }
    }

    let mut path = Vec::with_capacity(n);
    let mut floor = 0;
    for row in &suffix {
        let mut pick = floor;
        for s in floor + 1..ORDERED_STAGE_COUNT {
            if row[s] > row[pick] {
                pick = s;
            }
        }
        path.push(pick);
        floor = pick;
    }
    finish(&argmaxes, &active, &logs, &path)
}

/// Exhaustive search over every non-decreasing trajectory. Test oracle for
/// [`decode_monotone`]; movies are limited to 12 frames.
pub fn brute_force_decode<T: Real>(matrix: &StageProbabilityMatrix<T>) -> Result<TrajectoryResult<T>, DecodeError> {
    brute_force_rows(&matrix.score_rows())
}

pub fn brute_force_rows<T: Real>(rows: &[[T; STAGE_COUNT]]) -> Result<TrajectoryResult<T>, DecodeError> {
    if rows.len() > BRUTE_FORCE_MAX_FRAMES {
        return Err(DecodeError::TooLong { frames: rows.len() });
    }
    let (argmaxes, active, logs) = prepare(rows)?;
    let n = active.len();

    // Odometer over non-decreasing sequences in lexicographic order; only a
    // strictly better score replaces the incumbent.
    let mut current = vec![0usize; n];
    let mut best: Option<(T, Vec<usize>)> = None;
    loop {
        let score = path_score(&logs, &current);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, current.clone()));
        }
        let Some(pos) = (0..n).rev().find(|&i| current[i] + 1 < ORDERED_STAGE_COUNT) else {
            break;
        };
        let next = current[pos] + 1;
        for c in &mut current[pos..] {
            *c = next;
        }
    }
    let (_, path) = best.expect("at least one trajectory");
    finish(&argmaxes, &active, &logs, &path)
}

type Prepared<T> = (Vec<StageClass>, Vec<usize>, Vec<[T; ORDERED_STAGE_COUNT]>);

fn prepare<T: Real>(rows: &[[T; STAGE_COUNT]]) -> Result<Prepared<T>, DecodeError> {
    let argmaxes = argmax_rows(rows);
    let active: Vec<usize> = (0..rows.len()).filter(|&i| argmaxes[i].is_ordered()).collect();
    if active.is_empty() {
        return Err(DecodeError::AllExcluded);
    }
    let mut logs = Vec::with_capacity(active.len());
    for &frame in &active {
        let row = &rows[frame];
        if row[..ORDERED_STAGE_COUNT].iter().all(|&p| p <= T::zero()) {
            return Err(DecodeError::ZeroRow { frame });
        }
        logs.push(std::array::from_fn(|s| if row[s] > T::zero() { row[s].ln() } else { T::neg_infinity() }));
    }
    Ok((argmaxes, active, logs))
}

fn path_score<T: Real>(logs: &[[T; ORDERED_STAGE_COUNT]], path: &[usize]) -> T {
    logs.iter().zip(path).fold(T::zero(), |acc, (row, &s)| acc + row[s])
}

fn finish<T: Real>(
    argmaxes: &[StageClass],
    active: &[usize],
    logs: &[[T; ORDERED_STAGE_COUNT]],
    path: &[usize],
) -> Result<TrajectoryResult<T>, DecodeError> {
    let path_log_score = path_score(logs, path);
    if path_log_score == T::neg_infinity() {
        return Err(DecodeError::NoFeasiblePath);
    }
    let mut frames: Vec<FrameDecode> =
        argmaxes.iter().map(|&a| FrameDecode { argmax: a, decoded: a, excluded: a.is_excluded() }).collect();
    for (&frame, &s) in active.iter().zip(path) {
        frames[frame].decoded = StageClass::ORDERED[s];
    }
    Ok(TrajectoryResult { frames, path_log_score })
}
