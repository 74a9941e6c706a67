//! Instance matching, precision/recall, COCO-style mAP and area ratios.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::geometry::mask_iou;
use crate::model::{BinaryMask, InstanceCandidate};
use crate::scalar::{ratio, Real};

/// IoU thresholds averaged by [`mean_average_precision`]: 0.50, 0.55, ..., 0.95.
pub const MAP_IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair<T: Real> {
    pub prediction: usize,
    pub truth: usize,
    pub iou: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult<T: Real> {
    pub pairs: Vec<MatchPair<T>>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

impl<T: Real> MatchResult<T> {
    pub fn matched(&self) -> usize {
        self.pairs.len()
    }
}

fn iou_matrix<T: Real>(preds: &[InstanceCandidate<T>], truths: &[BinaryMask]) -> Result<Vec<Vec<T>>, MetricsError> {
    preds
        .iter()
        .map(|p| {
            truths
                .iter()
                .map(|t| {
                    if p.mask().dims() != t.dims() {
                        return Err(MetricsError::DimensionMismatch { left: p.mask().dims(), right: t.dims() });
                    }
                    Ok(mask_iou(p.mask(), t).unwrap_or(T::zero()))
                })
                .collect()
        })
        .collect()
}

/// Prediction indices by descending confidence; ties keep input order.
fn confidence_order<T: Real>(preds: &[InstanceCandidate<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence().partial_cmp(&preds[a].confidence()).expect("finite confidence"));
    order
}

// Greedy one-to-one assignment over a precomputed IoU matrix. Returns the
// matched truth (if any) per prediction.
fn greedy_assign<T: Real>(ious: &[Vec<T>], order: &[usize], n_truths: usize, threshold: T) -> Vec<Option<usize>> {
    let mut truth_taken = vec![false; n_truths];
    let mut assigned = vec![None; ious.len()];
    for &p in order {
        let mut best: Option<usize> = None;
        for t in 0..n_truths {
            if truth_taken[t] || ious[p][t] < threshold {
                continue;
            }
            if best.is_none_or(|b| ious[p][t] > ious[p][b]) {
                best = Some(t);
            }
        }
        if let Some(t) = best {
            truth_taken[t] = true;
            assigned[p] = Some(t);
        }
    }
    assigned
}

/// Greedy matching: predictions in descending confidence each take the
/// unmatched truth with the highest IoU, provided it reaches the threshold.
pub fn match_instances<T: Real>(
    preds: &[InstanceCandidate<T>],
    truths: &[BinaryMask],
    iou_threshold: T,
) -> Result<MatchResult<T>, MetricsError> {
    let ious = iou_matrix(preds, truths)?;
    let order = confidence_order(preds);
    let assigned = greedy_assign(&ious, &order, truths.len(), iou_threshold);

    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for &p in &order {
        match assigned[p] {
            Some(t) => pairs.push(MatchPair { prediction: p, truth: t, iou: ious[p][t] }),
            None => unmatched_predictions.push(p),
        }
    }
    let mut matched_truth = vec![false; truths.len()];
    for pair in &pairs {
        matched_truth[pair.truth] = true;
    }
    let unmatched_truths = (0..truths.len()).filter(|&t| !matched_truth[t]).collect();
    Ok(MatchResult { pairs, unmatched_predictions, unmatched_truths })
}

/// `(precision, recall)`; a rate with a zero denominator is `None`.
pub fn precision_recall<T: Real>(matches: &MatchResult<T>, n_preds: usize, n_truths: usize) -> (Option<T>, Option<T>) {
    (ratio(matches.matched(), n_preds), ratio(matches.matched(), n_truths))
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInstances<T: Real> {
    pub predictions: Vec<InstanceCandidate<T>>,
    pub truths: Vec<BinaryMask>,
}

/// All-point interpolated AP from detections already sorted by descending
/// confidence (`true` = true positive).
pub fn average_precision_from_flags<T: Real>(flags: &[bool], n_truths: usize) -> T {
    if n_truths == 0 || flags.is_empty() {
        return T::zero();
    }
    let n = T::count(n_truths);
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(T::count(tp) / T::count(i + 1));
        recall.push(T::count(tp) / n);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for (p, r) in precision.into_iter().zip(recall) {
        ap = ap + (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

struct PreparedImage<T: Real> {
    ious: Vec<Vec<T>>,
    order: Vec<usize>,
    confidences: Vec<T>,
    n_truths: usize,
}

fn prepare<T: Real>(images: &[ImageInstances<T>]) -> Result<Vec<PreparedImage<T>>, MetricsError> {
    images
        .iter()
        .map(|img| {
            Ok(PreparedImage {
                ious: iou_matrix(&img.predictions, &img.truths)?,
                order: confidence_order(&img.predictions),
                confidences: img.predictions.iter().map(|p| p.confidence()).collect(),
                n_truths: img.truths.len(),
            })
        })
        .collect()
}

fn ap_prepared<T: Real>(images: &[PreparedImage<T>], threshold: T) -> T {
    let n_truths: usize = images.iter().map(|i| i.n_truths).sum();
    // Pooled in image order, then per-image confidence order; the stable
    // sort below keeps that order among equal confidences.
    let mut pooled: Vec<(T, bool)> = Vec::new();
    for img in images {
        let assigned = greedy_assign(&img.ious, &img.order, img.n_truths, threshold);
        pooled.extend(img.order.iter().map(|&p| (img.confidences[p], assigned[p].is_some())));
    }
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite confidence"));
    let flags: Vec<bool> = pooled.into_iter().map(|(_, hit)| hit).collect();
    average_precision_from_flags(&flags, n_truths)
}

fn total_truths<T: Real>(images: &[ImageInstances<T>]) -> Result<(), MetricsError> {
    if images.iter().all(|i| i.truths.is_empty()) {
        return Err(MetricsError::NoTruths);
    }
    Ok(())
}

/// Average precision at one IoU threshold, pooling predictions over images.
pub fn average_precision_at<T: Real>(images: &[ImageInstances<T>], iou_threshold: T) -> Result<T, MetricsError> {
    total_truths(images)?;
    Ok(ap_prepared(&prepare(images)?, iou_threshold))
}

/// Per-threshold AP over [`MAP_IOU_THRESHOLDS`] and their mean.
pub fn average_precision_curve<T: Real>(images: &[ImageInstances<T>]) -> Result<(Vec<T>, T), MetricsError> {
    total_truths(images)?;
    let prepared = prepare(images)?;
    let aps: Vec<T> = MAP_IOU_THRESHOLDS.iter().map(|&t| ap_prepared(&prepared, T::lit(t))).collect();
    let mean = aps.iter().copied().sum::<T>() / T::count(aps.len());
    Ok((aps, mean))
}

/// COCO-style mAP: all-point AP averaged over IoU 0.50:0.05:0.95.
pub fn mean_average_precision<T: Real>(images: &[ImageInstances<T>]) -> Result<T, MetricsError> {
    average_precision_curve(images).map(|(_, m)| m)
}

/// Predicted-to-true area ratios of matched pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRatios<T: Real> {
    pub ratios: Vec<T>,
}

impl<T: Real> AreaRatios<T> {
    /// Fraction of pairs with `|ratio - 1| <= eps`.
    pub fn fraction_within(&self, eps: T) -> T {
        let hits = self.ratios.iter().filter(|&&r| (r - T::one()).abs() <= eps).count();
        T::count(hits) / T::count(self.ratios.len().max(1))
    }

    pub fn mean(&self) -> T {
        self.ratios.iter().copied().sum::<T>() / T::count(self.ratios.len().max(1))
    }
}

pub fn area_ratio_stats<T: Real>(
    matches: &MatchResult<T>,
    preds: &[InstanceCandidate<T>],
    truths: &[BinaryMask],
) -> Result<AreaRatios<T>, MetricsError> {
    if matches.pairs.is_empty() {
        return Err(MetricsError::EmptyMatch);
    }
    let ratios = matches
        .pairs
        .iter()
        .map(|pair| T::count(preds[pair.prediction].area()) / T::count(truths[pair.truth].area()))
        .collect();
    Ok(AreaRatios { ratios })
}
