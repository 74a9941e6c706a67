//! Scores a pipeline result against synthetic ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineResult};
use crate::metrics::{
    area_ratio_stats, average_precision_curve, fragmentation_metrics, match_instances, stage_metrics,
    AreaRatios, ImageInstances, MetricsError, PixelCounts,
};
use crate::scalar::ratio;
use crate::model::{BinaryMask, ZonaClass, FORMAT_VERSION};
use crate::synth::GroundTruth;
use crate::Candidate;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("result is for embryo {result:?}, truth for {truth:?}")]
    EmbryoMismatch { result: String, truth: String },
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateBlock {
    pub embryo_score: f64,
    pub low_fragmentation: bool,
    pub true_grade: u8,
    /// Predicted and true grade fall on the same side of the threshold.
    pub agrees: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outside_well: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inside_well: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zona: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inside_zona: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationBlock {
    pub frames: usize,
    pub overall: f64,
    pub per_class: ClassAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationBlock {
    pub frames: usize,
    /// Frames on the same side of the threshold as the true grade.
    pub agreeing: usize,
    pub mad: f64,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBlock {
    pub frames: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub argmax_accuracy: f64,
    /// Keyed by true class; each row is the distribution over predicted
    /// classes in canonical order.
    pub confusion: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub pairs: usize,
    pub tolerance: f64,
    pub within_tolerance: f64,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBlock {
    pub images: usize,
    pub predictions: usize,
    pub truths: usize,
    pub iou_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    pub map: f64,
    /// AP at each IoU threshold from 0.50 to 0.95.
    pub ap_by_iou: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<AreaSummary>,
}

/// Metric blocks for one embryo. A block is absent when its metric is
/// undefined, for example stage and detection blocks of gated-out embryos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub embryo_id: String,
    /// Ablation label of the run configuration.
    pub setting: String,
    pub frames: usize,
    pub gate: GateBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragmentation: Option<FragmentationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<InstanceBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pronuclei: Option<InstanceBlock>,
}

impl EvaluationReport {
    /// Column names and values for one flat CSV row. Absent metrics are
    /// empty strings.
    pub fn flat_fields(&self) -> Vec<(String, String)> {
        fn num(x: Option<f64>) -> String {
            x.map(crate::json::format_float).unwrap_or_default()
        }
        let mut out = vec![
            ("embryo_id".to_string(), self.embryo_id.clone()),
            ("setting".to_string(), self.setting.clone()),
            ("frames".to_string(), self.frames.to_string()),
            ("gate.embryo_score".to_string(), num(Some(self.gate.embryo_score))),
            ("gate.low_fragmentation".to_string(), self.gate.low_fragmentation.to_string()),
            ("gate.true_grade".to_string(), self.gate.true_grade.to_string()),
            ("gate.agrees".to_string(), self.gate.agrees.to_string()),
        ];
        let seg = self.segmentation.as_ref();
        out.push(("segmentation.overall".into(), num(seg.map(|s| s.overall))));
        for (name, get) in [
            ("outside_well", (|c: &ClassAccuracy| c.outside_well) as fn(&ClassAccuracy) -> Option<f64>),
            ("inside_well", |c| c.inside_well),
            ("zona", |c| c.zona),
            ("inside_zona", |c| c.inside_zona),
        ] {
            out.push((format!("segmentation.{name}"), num(seg.and_then(|s| get(&s.per_class)))));
        }
        let frag = self.fragmentation.as_ref();
        out.push(("fragmentation.mad".into(), num(frag.map(|f| f.mad))));
        out.push(("fragmentation.agreement".into(), num(frag.map(|f| f.agreement))));
        let stage = self.stage.as_ref();
        out.push(("stage.accuracy".into(), num(stage.map(|s| s.accuracy))));
        out.push(("stage.argmax_accuracy".into(), num(stage.map(|s| s.argmax_accuracy))));
        for (name, block) in [("cells", &self.cells), ("pronuclei", &self.pronuclei)] {
            let b = block.as_ref();
            out.push((format!("{name}.precision"), num(b.and_then(|b| b.precision))));
            out.push((format!("{name}.recall"), num(b.and_then(|b| b.recall))));
            out.push((format!("{name}.map"), num(b.map(|b| b.map))));
            let area = b.and_then(|b| b.area.as_ref());
            out.push((format!("{name}.area_within_tolerance"), num(area.map(|a| a.within_tolerance))));
            out.push((format!("{name}.area_mean_ratio"), num(area.map(|a| a.mean_ratio))));
        }
        out
    }
}

fn check_frames(result: &PipelineResult, truth: &GroundTruth) -> Result<(), EvalError> {
    if result.embryo_id != truth.embryo_id {
        return Err(EvalError::EmbryoMismatch { result: result.embryo_id.clone(), truth: truth.embryo_id.clone() });
    }
    if result.frames.len() != truth.frames.len() {
        return Err(EvalError::FrameMismatch(format!(
            "result has {} frames, truth has {}",
            result.frames.len(),
            truth.frames.len()
        )));
    }
    for (i, (r, t)) in result.frames.iter().zip(&truth.frames).enumerate() {
        if r.t != t.t {
            return Err(EvalError::FrameMismatch(format!("frame {i}: result t={}, truth t={}", r.t, t.t)));
        }
    }
    Ok(())
}

fn instance_block(
    images: Vec<ImageInstances<f64>>,
    config: &PipelineConfig,
) -> Result<Option<InstanceBlock>, EvalError> {
    let truths: usize = images.iter().map(|im| im.truths.len()).sum();
    if truths == 0 {
        return Ok(None);
    }
    let predictions: usize = images.iter().map(|im| im.predictions.len()).sum();
    let (ap_by_iou, map) = average_precision_curve(&images)?;

    let mut matched = 0;
    let mut ratios = Vec::new();
    for im in &images {
        let m = match_instances(&im.predictions, &im.truths, config.eval_iou_threshold)?;
        matched += m.matched();
        if m.matched() > 0 {
            ratios.extend(area_ratio_stats(&m, &im.predictions, &im.truths)?.ratios);
        }
    }
    let precision = ratio(matched, predictions);
    let recall = ratio(matched, truths);
    let area = (!ratios.is_empty()).then(|| {
        let stats = AreaRatios { ratios };
        AreaSummary {
            pairs: stats.ratios.len(),
            tolerance: config.area_tolerance,
            within_tolerance: stats.fraction_within(config.area_tolerance),
            mean_ratio: stats.mean(),
        }
    });
    Ok(Some(InstanceBlock {
        images: images.len(),
        predictions,
        truths,
        iou_threshold: config.eval_iou_threshold,
        precision,
        recall,
        map,
        ap_by_iou,
        area,
    }))
}

/// Evaluates every metric block. `config` supplies the evaluation
/// thresholds; the setting label comes from the run's own configuration.
pub fn evaluate_run(
    result: &PipelineResult,
    truth: &GroundTruth,
    config: &PipelineConfig,
) -> Result<EvaluationReport, EvalError> {
    check_frames(result, truth)?;
    let n = result.frames.len();
    let threshold = config.fragmentation_threshold;
    let grade = truth.fragmentation_grade;

    let gate = GateBlock {
        embryo_score: result.gate.embryo_score.value(),
        low_fragmentation: result.gate.low_fragmentation,
        true_grade: grade,
        agrees: result.gate.low_fragmentation == (f64::from(grade) < threshold),
    };

    let segmentation = if result.frames.iter().all(|f| f.segmentation.is_some()) && n > 0 {
        let mut counts = PixelCounts::default();
        for (i, f) in result.frames.iter().enumerate() {
            let pred = f.segmentation.as_ref().expect("checked above");
            counts.add(&PixelCounts::tally(pred, &truth.segmentation_map(i))?);
        }
        counts.accuracy::<f64>().map(|acc| SegmentationBlock {
            frames: n,
            overall: acc.overall,
            per_class: ClassAccuracy {
                outside_well: acc.class(ZonaClass::OutsideWell),
                inside_well: acc.class(ZonaClass::InsideWell),
                zona: acc.class(ZonaClass::Zona),
                inside_zona: acc.class(ZonaClass::InsideZona),
            },
        })
    } else {
        None
    };

    let fragmentation = if n > 0 {
        let preds: Vec<f64> = result.frames.iter().map(|f| f.fragmentation).collect();
        let agreement = fragmentation_metrics(&preds, &vec![grade; n], threshold)?;
        let agreeing = preds.iter().filter(|&&p| (p < threshold) == (f64::from(grade) < threshold)).count();
        Some(FragmentationBlock { frames: n, agreeing, mad: agreement.mad, agreement: agreement.agreement })
    } else {
        None
    };

    let stage_records: Option<Vec<_>> = result.frames.iter().map(|f| f.stage.as_ref()).collect();
    let (mut stage, mut cells, mut pronuclei) = (None, None, None);
    if let Some(records) = stage_records.filter(|r| !r.is_empty()) {
        let truth_stages = truth.stages();
        let decoded: Vec<_> = records.iter().map(|r| r.decoded).collect();
        let argmax: Vec<_> = records.iter().map(|r| r.argmax).collect();
        let m = stage_metrics::<f64>(&decoded, &truth_stages)?;
        let argmax_accuracy = stage_metrics::<f64>(&argmax, &truth_stages)?.accuracy;
        let confusion = crate::model::StageClass::ALL
            .iter()
            .filter_map(|&c| m.row(c).map(|row| (c.name().to_string(), row.to_vec())))
            .collect();
        let correct = decoded.iter().zip(&truth_stages).filter(|(d, t)| d == t).count();
        stage = Some(StageBlock { frames: n, correct, accuracy: m.accuracy, argmax_accuracy, confusion });

        let images = |pick: fn(&super::FrameRecord) -> &Option<Vec<Candidate>>, truths: &dyn Fn(usize) -> Vec<BinaryMask>| {
            result
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| ImageInstances { predictions: pick(f).clone().unwrap_or_default(), truths: truths(i) })
                .filter(|im| !(im.predictions.is_empty() && im.truths.is_empty()))
                .collect::<Vec<_>>()
        };
        cells = instance_block(images(|f| &f.cells, &|i| truth.cell_masks(i)), config)?;
        pronuclei = instance_block(images(|f| &f.pronuclei, &|i| truth.pronucleus_masks(i)), config)?;
    }

    Ok(EvaluationReport {
        format_version: FORMAT_VERSION,
        embryo_id: result.embryo_id.clone(),
        setting: result.config.ablation_label(),
        frames: n,
        gate,
        segmentation,
        fragmentation,
        stage,
        cells,
        pronuclei,
    })
}
