//! End-to-end orchestration over pluggable backends.
//!
//! Per frame: zona segmentation on the middle plane gives the ROI; the
//! fragmentation scorer runs on the middle planes and is averaged. The embryo
//! is then gated on its fragmentation score. Low-fragmentation embryos get
//! stage decoding over the whole movie, after which frames are routed to the
//! cell and pronucleus detectors and their per-plane candidates are merged.

pub mod backend;
mod eval;
mod files;
mod report;

pub use backend::{BackendError, BackendSuite, FrameRef};
pub use eval::{evaluate_run, AreaSummary, ClassAccuracy, EvalError, GateBlock, EvaluationReport, FragmentationBlock, InstanceBlock, SegmentationBlock, StageBlock};
pub use files::{
    read_ndjson, write_backend_outputs, CandidateLine, FileBackend, FileError, FragmentationLine, NdjsonHeader, StageLine,
    ZonaLine, CELLS_FILE, FRAGMENTATION_FILE, PRONUCLEI_FILE, STAGE_FILE, ZONA_FILE,
};
pub use report::{ablation_table, setting_name, AblationRow, ABLATION_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::decoder::{argmax_trajectory, decode_monotone, DecodeError};
use crate::gating::{
    average_fragmentation, gate_embryo_with, middle_planes, route_frame, Aggregation, FragmentationScore,
    GatingError, DEFAULT_FRAGMENTATION_THRESHOLD,
};
use crate::geometry::{embryo_roi, merge_across_planes, GeometryError, Roi, DEFAULT_MERGE_IOU, DEFAULT_ROI_SIDE};
use crate::model::{CandidateKind, EmbryoMovie, ModelError, SegmentationMap, StageClass, StageProbabilityMatrix, FORMAT_VERSION};
use crate::{Candidate, Gate, ProbVector};

/// Pipeline step, used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Zona,
    Fragmentation,
    Stage,
    Cells,
    Pronuclei,
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Step::Zona => "zona",
            Step::Fragmentation => "fragmentation",
            Step::Stage => "stage",
            Step::Cells => "cells",
            Step::Pronuclei => "pronuclei",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("backend failure at {step} on frame {frame}: {message}")]
    BackendFailure { step: Step, frame: usize, message: String },
    #[error("frame {frame} is missing plane {plane}")]
    MissingPlanes { frame: usize, plane: usize },
    #[error("invalid movie: {0}")]
    Movie(#[from] ModelError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Gating(#[from] GatingError),
    #[error(transparent)]
    File(#[from] FileError),
}

impl PipelineError {
    /// Backend failures are reported separately from validation errors.
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, PipelineError::BackendFailure { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub roi_side: u32,
    pub fragmentation_threshold: f64,
    pub gate_aggregation: Aggregation,
    pub merge_iou_threshold: f64,
    /// Overrides the three centered planes of the stack.
    pub middle_planes: Option<[usize; 3]>,
    pub use_roi: bool,
    pub use_focus_averaging: bool,
    pub use_dp: bool,
    /// Store predicted segmentation maps in the result (needed for pixel
    /// accuracy during evaluation).
    pub keep_segmentation: bool,
    /// IoU for the precision/recall operating point and area ratios.
    pub eval_iou_threshold: f64,
    /// Relative area tolerance reported by evaluation.
    pub area_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            roi_side: DEFAULT_ROI_SIDE,
            fragmentation_threshold: DEFAULT_FRAGMENTATION_THRESHOLD,
            gate_aggregation: Aggregation::Median,
            merge_iou_threshold: DEFAULT_MERGE_IOU,
            middle_planes: None,
            use_roi: true,
            use_focus_averaging: true,
            use_dp: true,
            keep_segmentation: true,
            eval_iou_threshold: 0.5,
            area_tolerance: 0.17,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.roi_side == 0 {
            return bad("roi_side must be positive");
        }
        if !(0.0..=3.0).contains(&self.fragmentation_threshold) {
            return bad("fragmentation_threshold must lie in [0, 3]");
        }
        for (name, v) in [("merge_iou_threshold", self.merge_iou_threshold), ("eval_iou_threshold", self.eval_iou_threshold)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(PipelineError::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        if !(self.area_tolerance >= 0.0) {
            return bad("area_tolerance must be non-negative");
        }
        Ok(())
    }

    /// Table row label: `full`, or the disabled components joined by `+`.
    pub fn ablation_label(&self) -> String {
        let mut parts = Vec::new();
        if !self.use_focus_averaging {
            parts.push("single_focus");
        }
        if !self.use_roi {
            parts.push("no_roi");
        }
        if !self.use_dp {
            parts.push("no_dp");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }

    fn planes(&self, plane_count: usize) -> Result<[usize; 3], PipelineError> {
        match self.middle_planes {
            Some(p) => Ok(p),
            None => Ok(middle_planes(plane_count)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub probabilities: ProbVector,
    pub argmax: StageClass,
    pub decoded: StageClass,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub roi: Roi,
    /// The zona segmentation found no embryo and the centered ROI was used.
    pub roi_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationMap>,
    /// Focus-averaged fragmentation score.
    pub fragmentation: f64,
    pub plane_fragmentation: Vec<f64>,
    /// Absent for gated-out embryos.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageRecord>,
    /// Merged cell candidates; absent unless the frame was routed to the cell detector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Candidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pronuclei: Option<Vec<Candidate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub format_version: u32,
    pub embryo_id: String,
    pub config: PipelineConfig,
    pub gate: Gate,
    /// Score of the decoded trajectory when dynamic programming ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_log_score: Option<f64>,
    pub frames: Vec<FrameRecord>,
}

impl PipelineResult {
    /// Decoded stages of frames that have stage records.
    pub fn decoded_stages(&self) -> Option<Vec<StageClass>> {
        self.frames.iter().map(|f| f.stage.as_ref().map(|s| s.decoded)).collect()
    }
}

fn backend_err(step: Step, frame: usize) -> impl Fn(BackendError) -> PipelineError {
    move |e| PipelineError::BackendFailure { step, frame, message: e.0 }
}

fn check_candidates(
    step: Step,
    frame: usize,
    kind: CandidateKind,
    dims: (u32, u32),
    cands: &[Candidate],
) -> Result<(), PipelineError> {
    for c in cands {
        if c.kind() != kind || c.mask().dims() != dims {
            return Err(PipelineError::BackendFailure {
                step,
                frame,
                message: format!("candidate of kind {:?} with mask {:?}, expected {kind:?} {dims:?}", c.kind(), c.mask().dims()),
            });
        }
    }
    Ok(())
}

/// Runs the measurement pipeline over one movie.
pub fn run_pipeline(
    movie: &EmbryoMovie,
    backends: &BackendSuite<'_>,
    config: &PipelineConfig,
) -> Result<PipelineResult, PipelineError> {
    config.validate()?;
    let planes = config.planes(movie.plane_count)?;
    for (i, f) in movie.frames.iter().enumerate() {
        for &p in &planes {
            if f.planes.get(p).is_none_or(|r| r.is_empty()) {
                return Err(PipelineError::MissingPlanes { frame: i, plane: p });
            }
        }
    }
    movie.validate()?;
    let (width, height) = movie.image_size;
    let center_plane = planes[1];
    let frag_planes: &[usize] = if config.use_focus_averaging { &planes } else { &planes[1..2] };

    // Zona, ROI and fragmentation for every frame.
    let mut records = Vec::with_capacity(movie.len());
    for (i, frame) in movie.frames.iter().enumerate() {
        let fr = FrameRef { index: i, frame };
        let seg = backends.zona.segment(fr, center_plane).map_err(backend_err(Step::Zona, i))?;
        if seg.dims() != (width, height) {
            return Err(PipelineError::BackendFailure {
                step: Step::Zona,
                frame: i,
                message: format!("segmentation is {:?}, image is {:?}", seg.dims(), (width, height)),
            });
        }
        let (roi, roi_fallback) = if config.use_roi {
            match embryo_roi(&seg, config.roi_side) {
                Ok(r) => (r, false),
                Err(GeometryError::NoEmbryo) => (Roi::centered(config.roi_side, width, height)?, true),
                Err(e) => return Err(e.into()),
            }
        } else {
            (Roi::full(width, height), false)
        };

        let mut plane_scores = Vec::with_capacity(frag_planes.len());
        for &p in frag_planes {
            let s = backends.fragmentation.score(fr, p, &roi).map_err(backend_err(Step::Fragmentation, i))?;
            if !s.is_finite() {
                return Err(PipelineError::BackendFailure { step: Step::Fragmentation, frame: i, message: "non-finite score".into() });
            }
            plane_scores.push(FragmentationScore::clamped(s));
        }
        let fragmentation = if plane_scores.len() == 3 { average_fragmentation(&plane_scores)? } else { plane_scores[0] };

        records.push(FrameRecord {
            t: frame.t,
            roi,
            roi_fallback,
            segmentation: config.keep_segmentation.then_some(seg),
            fragmentation: fragmentation.value(),
            plane_fragmentation: plane_scores.iter().map(|s| s.value()).collect(),
            stage: None,
            cells: None,
            pronuclei: None,
        });
    }

    // Stage probabilities are needed to find the cleavage frames the gate
    // aggregates over.
    let mut probs = Vec::with_capacity(movie.len());
    for (i, frame) in movie.frames.iter().enumerate() {
        let fr = FrameRef { index: i, frame };
        probs.push(backends.stage.classify(fr, &planes, &records[i].roi).map_err(backend_err(Step::Stage, i))?);
    }
    let matrix = StageProbabilityMatrix::new(probs.clone(), movie.times())?;
    let monotone = decode_monotone(&matrix);

    let scores: Vec<FragmentationScore<f64>> =
        records.iter().map(|r| FragmentationScore::clamped(r.fragmentation)).collect();
    let cleavage: Vec<FragmentationScore<f64>> = match &monotone {
        Ok(traj) => traj.frames.iter().zip(&scores).filter(|(d, _)| d.decoded.is_cleavage()).map(|(_, s)| *s).collect(),
        Err(_) => Vec::new(),
    };
    let gate_input = if cleavage.is_empty() { &scores } else { &cleavage };
    let gate = gate_embryo_with(gate_input, config.fragmentation_threshold, config.gate_aggregation)?;

    let mut path_log_score = None;
    if gate.low_fragmentation {
        let argmaxes = argmax_trajectory(&matrix);
        let decoded: Vec<StageClass> = if config.use_dp {
            match monotone {
                Ok(traj) => {
                    path_log_score = Some(traj.path_log_score);
                    traj.decoded()
                }
                Err(DecodeError::AllExcluded) => argmaxes.clone(),
                Err(e) => return Err(e.into()),
            }
        } else {
            argmaxes.clone()
        };

        for (i, frame) in movie.frames.iter().enumerate() {
            let fr = FrameRef { index: i, frame };
            let record = &mut records[i];
            record.stage = Some(StageRecord {
                probabilities: probs[i],
                argmax: argmaxes[i],
                decoded: decoded[i],
                excluded: argmaxes[i].is_excluded(),
            });
            let route = route_frame(decoded[i]);
            let detectors = [
                (route.cell_detector, Step::Cells, CandidateKind::Cell, backends.cells),
                (route.pronucleus_detector, Step::Pronuclei, CandidateKind::Pronucleus, backends.pronuclei),
            ];
            for (enabled, step, kind, detector) in detectors {
                if !enabled {
                    continue;
                }
                let mut all = Vec::new();
                for &p in &planes {
                    let found = detector.detect(kind, fr, p, &record.roi).map_err(backend_err(step, i))?;
                    check_candidates(step, i, kind, (width, height), &found)?;
                    all.extend(found);
                }
                let merged = merge_across_planes(&all, config.merge_iou_threshold)?;
                match kind {
                    CandidateKind::Cell => record.cells = Some(merged),
                    CandidateKind::Pronucleus => record.pronuclei = Some(merged),
                }
            }
        }
    }

    Ok(PipelineResult {
        format_version: FORMAT_VERSION,
        embryo_id: movie.embryo_id.clone(),
        config: config.clone(),
        gate,
        path_log_score,
        frames: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::backend::{FragmentationScorer, InstanceDetector, StageClassifier, ZonaSegmenter};
    use crate::synth::{generate_movie, SynthBackend, SynthConfig};

    fn synth(seed: u64, frames: usize) -> (EmbryoMovie, SynthBackend) {
        let mut config = SynthConfig { seed, frames, image_size: 200, ..SynthConfig::default() };
        config.fragmentation_grades = [1.0, 0.0, 0.0, 0.0];
        let (movie, truth) = generate_movie(&config).unwrap();
        (movie, SynthBackend::new(truth, config).unwrap())
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig { roi_side: 140, ..PipelineConfig::default() }
    }

    #[test]
    fn zero_noise_run_matches_truth() {
        let (movie, backend) = synth(4, 150);
        let result = run_pipeline(&movie, &BackendSuite::uniform(&backend), &small_config()).unwrap();
        assert!(result.gate.low_fragmentation);
        assert_eq!(result.decoded_stages().unwrap(), backend.truth().stages());
        for (i, f) in result.frames.iter().enumerate() {
            let mut truth = backend.truth().cell_masks(i);
            truth.sort_by(|a, b| a.runs().cmp(b.runs()));
            match &f.cells {
                Some(c) => {
                    let mut got: Vec<_> = c.iter().map(|c| c.mask().clone()).collect();
                    got.sort_by(|a, b| a.runs().cmp(b.runs()));
                    assert_eq!(got, truth);
                }
                None => assert!(truth.is_empty()),
            }
            assert_eq!(f.pronuclei.as_ref().map_or(0, |p| p.len()), backend.truth().frames[i].pronuclei.len());
        }
    }

    #[test]
    fn high_fragmentation_stops_after_gate() {
        let mut config = SynthConfig { seed: 1, frames: 40, image_size: 200, ..SynthConfig::default() };
        config.fragmentation_grades = [0.0, 0.0, 0.0, 1.0];
        let (movie, truth) = generate_movie(&config).unwrap();
        let backend = SynthBackend::new(truth, config).unwrap();
        let result = run_pipeline(&movie, &BackendSuite::uniform(&backend), &small_config()).unwrap();
        assert!(!result.gate.low_fragmentation);
        assert_eq!(result.gate.embryo_score.value(), 3.0);
        assert!(result.frames.iter().all(|f| f.stage.is_none() && f.cells.is_none() && f.pronuclei.is_none()));
        assert!(result.frames.iter().all(|f| f.segmentation.is_some()));
    }

    #[test]
    fn single_focus_uses_one_plane() {
        let (movie, backend) = synth(2, 20);
        let config = PipelineConfig { use_focus_averaging: false, ..small_config() };
        let result = run_pipeline(&movie, &BackendSuite::uniform(&backend), &config).unwrap();
        assert!(result.frames.iter().all(|f| f.plane_fragmentation.len() == 1));
        let config = PipelineConfig { use_roi: false, ..small_config() };
        let result = run_pipeline(&movie, &BackendSuite::uniform(&backend), &config).unwrap();
        assert!(result.frames.iter().all(|f| f.roi == Roi::full(200, 200)));
    }

    #[test]
    fn missing_plane_reference() {
        let (mut movie, backend) = synth(2, 5);
        movie.frames[3].planes[4].clear();
        let err = run_pipeline(&movie, &BackendSuite::uniform(&backend), &small_config()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingPlanes { frame: 3, plane: 4 }));
    }

    struct Failing;
    impl ZonaSegmenter for Failing {
        fn segment(&self, _: FrameRef<'_>, _: usize) -> Result<SegmentationMap, BackendError> {
            Err(BackendError::new("model not loaded"))
        }
    }

    struct WrongKind<'a>(&'a SynthBackend);
    impl InstanceDetector for WrongKind<'_> {
        fn detect(&self, _: CandidateKind, f: FrameRef<'_>, p: usize, roi: &Roi) -> Result<Vec<Candidate>, BackendError> {
            self.0.detect(CandidateKind::Pronucleus, f, p, roi)
        }
    }

    #[test]
    fn backend_failures_carry_step_and_frame() {
        let (movie, backend) = synth(2, 5);
        let mut suite = BackendSuite::uniform(&backend);
        suite.zona = &Failing;
        let err = run_pipeline(&movie, &suite, &small_config()).unwrap_err();
        assert!(err.is_backend_failure());
        assert!(matches!(err, PipelineError::BackendFailure { step: Step::Zona, frame: 0, .. }));

        let wrong = WrongKind(&backend);
        let mut suite = BackendSuite::uniform(&backend);
        suite.cells = &wrong;
        let err = run_pipeline(&movie, &suite, &small_config()).unwrap_err();
        assert!(matches!(err, PipelineError::BackendFailure { step: Step::Cells, .. }));
    }

    struct AllEmpty;
    impl StageClassifier for AllEmpty {
        fn classify(&self, _: FrameRef<'_>, _: &[usize], _: &Roi) -> Result<ProbVector, BackendError> {
            Ok(crate::model::ProbVector13::one_hot(StageClass::Empty))
        }
    }

    #[test]
    fn empty_well_movie_routes_nothing() {
        let (movie, backend) = synth(2, 6);
        let mut suite = BackendSuite::uniform(&backend);
        suite.stage = &AllEmpty;
        let result = run_pipeline(&movie, &suite, &small_config()).unwrap();
        for f in &result.frames {
            let s = f.stage.as_ref().unwrap();
            assert!(s.excluded);
            assert_eq!(s.decoded, StageClass::Empty);
            assert!(f.cells.is_none() && f.pronuclei.is_none());
        }
        assert_eq!(result.path_log_score, None);
    }

    #[test]
    fn config_validation_and_labels() {
        assert!(PipelineConfig { merge_iou_threshold: 0.0, ..PipelineConfig::default() }.validate().is_err());
        assert!(PipelineConfig { fragmentation_threshold: 4.0, ..PipelineConfig::default() }.validate().is_err());
        assert_eq!(PipelineConfig::default().ablation_label(), "full");
        let c = PipelineConfig { use_dp: false, use_roi: false, ..PipelineConfig::default() };
        assert_eq!(c.ablation_label(), "no_roi+no_dp");
        let parsed: PipelineConfig = serde_json::from_str(r#"{"use_dp": false}"#).unwrap();
        assert_eq!(parsed.roi_side, 328);
        assert!(!parsed.use_dp);
    }

    #[allow(dead_code)]
    fn assert_object_safe(_: &dyn FragmentationScorer) {}
}
