//! Synthetic stand-in for the five networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{sub_rng, GroundTruth, SynthConfig, SynthError};
use crate::geometry::{crop_mask, mask_iou, paste_mask, Roi};
use crate::model::{CandidateKind, InstanceCandidate, ProbVector13, SegmentationMap, ZonaClass, STAGE_COUNT};
use crate::pipeline::backend::{
    BackendError, FragmentationScorer, FrameRef, InstanceDetector, StageClassifier, ZonaSegmenter,
};
use crate::{Candidate, ProbVector};

const TAG_SEGMENTATION: u64 = 11;
const TAG_FRAGMENTATION: u64 = 12;
const TAG_STAGE: u64 = 13;
const TAG_CELLS: u64 = 14;
const TAG_PRONUCLEI: u64 = 15;

/// Renders noisy network outputs from ground truth.
#[derive(Debug, Clone)]
pub struct SynthBackend {
    truth: GroundTruth,
    config: SynthConfig,
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

impl SynthBackend {
    pub fn new(truth: GroundTruth, config: SynthConfig) -> Result<Self, SynthError> {
        config.validate()?;
        if truth.image_size != (config.image_size, config.image_size) {
            return Err(SynthError::InvalidConfig("truth image size differs from config".into()));
        }
        Ok(SynthBackend { truth, config })
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    fn frame_index(&self, frame: FrameRef<'_>) -> Result<usize, BackendError> {
        let i = frame.index;
        match self.truth.frames.get(i) {
            Some(f) if f.t == frame.t() => Ok(i),
            _ => Err(BackendError::new(format!("no synthetic frame {i} at t={}", frame.t()))),
        }
    }

    /// Truth map with each pixel independently relabelled, with probability
    /// `seg_flip_rate`, to a uniformly chosen different class.
    pub fn render_segmentation(&self, frame: usize, plane: usize) -> SegmentationMap {
        let mut map = self.truth.segmentation_map(frame);
        let rate = self.config.noise.seg_flip_rate;
        if rate > 0.0 {
            let mut rng = sub_rng(self.config.seed, TAG_SEGMENTATION, frame as u64, plane as u64);
            for label in map.labels_mut() {
                if rng.random::<f64>() < rate {
                    let shift = rng.random_range(1..4usize);
                    *label = ZonaClass::ALL[(label.index() + shift) % 4];
                }
            }
        }
        map
    }

    /// True grade plus Gaussian noise, clamped to `[0, 3]`.
    pub fn render_fragmentation(&self, frame: usize, plane: usize) -> f64 {
        let mut rng = sub_rng(self.config.seed, TAG_FRAGMENTATION, frame as u64, plane as u64);
        let noisy = self.truth.fragmentation_grade as f64 + gaussian(&mut rng, self.config.noise.fragmentation_sigma);
        noisy.clamp(0.0, 3.0)
    }

    /// Softmax of the scaled one-hot truth plus Gaussian logit noise. With
    /// no logit noise the one-hot truth itself is returned.
    pub fn render_stage(&self, frame: usize) -> ProbVector {
        let stage = self.truth.frames[frame].stage;
        let noise = &self.config.noise;
        if noise.logit_sigma == 0.0 {
            return ProbVector13::one_hot(stage);
        }
        let mut rng = sub_rng(self.config.seed, TAG_STAGE, frame as u64, 0);
        let logits: [f64; STAGE_COUNT] = std::array::from_fn(|c| {
            let base = if c == stage.index() { noise.logit_scale } else { 0.0 };
            base + gaussian(&mut rng, noise.logit_sigma)
        });
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp = logits.map(|l| (l - max).exp());
        let sum: f64 = exp.iter().sum();
        ProbVector13::new(exp.map(|e| e / sum)).expect("softmax is a distribution")
    }

    /// Jittered copies of the true disks, restricted to the ROI, with
    /// confidence `clamp(IoU with truth + noise)`.
    pub fn render_candidates(&self, kind: CandidateKind, frame: usize, plane: usize, roi: &Roi) -> Vec<Candidate> {
        let (w, h) = self.truth.image_size;
        let tf = &self.truth.frames[frame];
        let (circles, tag) = match kind {
            CandidateKind::Cell => (&tf.cells, TAG_CELLS),
            CandidateKind::Pronucleus => (&tf.pronuclei, TAG_PRONUCLEI),
        };
        let noise = &self.config.noise;
        let mut rng = sub_rng(self.config.seed, tag, frame as u64, plane as u64);
        let mut out = Vec::with_capacity(circles.len());
        for truth_circle in circles {
            let mut c = *truth_circle;
            c.cx += gaussian(&mut rng, noise.mask_jitter_px);
            c.cy += gaussian(&mut rng, noise.mask_jitter_px);
            c.r = (c.r + gaussian(&mut rng, noise.mask_jitter_px)).max(0.0);
            let conf_noise = gaussian(&mut rng, noise.confidence_sigma);

            let full = c.mask(w, h);
            let visible = match crop_mask(&full, roi) {
                Ok(cropped) => paste_mask(&cropped, roi, w, h).expect("roi fits the image"),
                Err(_) => continue,
            };
            if visible.area() == 0 {
                continue;
            }
            let iou: f64 = mask_iou(&visible, &truth_circle.mask(w, h)).unwrap_or(0.0);
            let confidence = (iou + conf_noise).clamp(0.0, 1.0);
            out.push(InstanceCandidate::new(visible, confidence, plane as u8, kind).expect("non-empty mask"));
        }
        out
    }
}

impl ZonaSegmenter for SynthBackend {
    fn segment(&self, frame: FrameRef<'_>, plane: usize) -> Result<SegmentationMap, BackendError> {
        Ok(self.render_segmentation(self.frame_index(frame)?, plane))
    }
}

impl FragmentationScorer for SynthBackend {
    fn score(&self, frame: FrameRef<'_>, plane: usize, _roi: &Roi) -> Result<f64, BackendError> {
        Ok(self.render_fragmentation(self.frame_index(frame)?, plane))
    }
}

impl StageClassifier for SynthBackend {
    fn classify(&self, frame: FrameRef<'_>, _planes: &[usize], _roi: &Roi) -> Result<ProbVector, BackendError> {
        Ok(self.render_stage(self.frame_index(frame)?))
    }
}

impl InstanceDetector for SynthBackend {
    fn detect(&self, kind: CandidateKind, frame: FrameRef<'_>, plane: usize, roi: &Roi) -> Result<Vec<Candidate>, BackendError> {
        Ok(self.render_candidates(kind, self.frame_index(frame)?, plane, roi))
    }
}
