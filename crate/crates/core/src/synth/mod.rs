//! Synthetic embryo movies with exact ground truth.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`). Every draw is made from a
//! generator seeded by mixing the configured seed with a fixed purpose tag
//! (and, for rendering, the frame and plane index) through SplitMix64, so
//! outputs do not depend on call order or thread count.

mod backend;
mod truth;

pub use backend::SynthBackend;
pub use truth::{Circle, GroundTruth, TruthFrame, ZonaGeometry};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{EmbryoMovie, ModelError, MovieFrame, StageClass, ORDERED_STAGE_COUNT};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Inclusive range of frames spent in one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DwellRange {
    pub min: u32,
    pub max: u32,
}

impl DwellRange {
    pub const fn new(min: u32, max: u32) -> Self {
        DwellRange { min, max }
    }
}

/// Noise applied by the synthetic backend. All zero reproduces the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of Gaussian noise added to every stage logit.
    pub logit_sigma: f64,
    /// Logit given to the true stage before noise.
    pub logit_scale: f64,
    /// Standard deviation, in pixels, of candidate center and radius jitter.
    pub mask_jitter_px: f64,
    pub confidence_sigma: f64,
    pub fragmentation_sigma: f64,
    /// Probability that a segmentation pixel is relabelled to another class.
    pub seg_flip_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            logit_sigma: 0.0,
            logit_scale: 4.0,
            mask_jitter_px: 0.0,
            confidence_sigma: 0.0,
            fragmentation_sigma: 0.0,
            seg_flip_rate: 0.0,
        }
    }
}

/// Synthetic default dwell times in 20-minute frames; not clinical values.
pub const DEFAULT_DWELL: [DwellRange; ORDERED_STAGE_COUNT] = [
    DwellRange::new(60, 90),
    DwellRange::new(25, 40),
    DwellRange::new(1, 6),
    DwellRange::new(25, 40),
    DwellRange::new(1, 6),
    DwellRange::new(1, 6),
    DwellRange::new(1, 6),
    DwellRange::new(20, 35),
    DwellRange::new(30, 50),
    DwellRange::new(40, 60),
    DwellRange::new(60, 100),
];

/// Frame-level pronucleus count weights for 0, 1 and 2 pronuclei.
pub const DEFAULT_PRONUCLEUS_WEIGHTS: [f64; 3] = [0.38, 0.06, 0.54];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub embryo_id: String,
    pub seed: u64,
    pub frames: usize,
    pub cadence_minutes: f64,
    pub image_size: u32,
    pub plane_count: usize,
    pub dwell: [DwellRange; ORDERED_STAGE_COUNT],
    /// Weights of fragmentation grades 0..=3.
    pub fragmentation_grades: [f64; 4],
    /// Weights of 0, 1 and 2 visible pronuclei over 1-cell frames.
    /// Normalized before use.
    pub pronucleus_counts: [f64; 3],
    pub noise: NoiseConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            embryo_id: "synthetic".to_string(),
            seed: 0,
            frames: 300,
            cadence_minutes: 20.0,
            image_size: 500,
            plane_count: 7,
            dwell: DEFAULT_DWELL,
            fragmentation_grades: [0.4, 0.3, 0.2, 0.1],
            pronucleus_counts: DEFAULT_PRONUCLEUS_WEIGHTS,
            noise: NoiseConfig::default(),
        }
    }
}

fn check_weights(name: &str, w: &[f64]) -> Result<(), SynthError> {
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
        return Err(SynthError::InvalidConfig(format!("{name} must be non-negative with a positive sum")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if !(self.cadence_minutes > 0.0) {
            return bad("cadence_minutes must be positive");
        }
        if self.image_size < 64 {
            return bad("image_size must be at least 64");
        }
        if self.plane_count < 3 || self.plane_count.is_multiple_of(2) {
            return bad("plane_count must be odd and at least 3");
        }
        if self.dwell.iter().any(|d| d.min == 0 || d.min > d.max) {
            return bad("dwell ranges must satisfy 1 <= min <= max");
        }
        check_weights("fragmentation_grades", &self.fragmentation_grades)?;
        check_weights("pronucleus_counts", &self.pronucleus_counts)?;
        let n = &self.noise;
        let sigmas = [n.logit_sigma, n.mask_jitter_px, n.confidence_sigma, n.fragmentation_sigma];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) || !n.logit_scale.is_finite() {
            return bad("noise parameters must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&n.seg_flip_rate) {
            return bad("seg_flip_rate must lie in [0, 1]");
        }
        Ok(())
    }

    /// Normalized pronucleus-count distribution.
    pub fn pronucleus_distribution(&self) -> [f64; 3] {
        let s: f64 = self.pronucleus_counts.iter().sum();
        self.pronucleus_counts.map(|w| w / s)
    }

    /// Same configuration with every noise source switched off.
    pub fn noiseless(mut self) -> Self {
        let scale = self.noise.logit_scale;
        self.noise = NoiseConfig { logit_scale: scale, ..NoiseConfig::default() };
        self
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th embryo of a batch generated from `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5EED)))
}

pub(crate) fn sub_rng(seed: u64, tag: u64, frame: u64, plane: u64) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(splitmix64(seed ^ tag) ^ frame) ^ plane);
    ChaCha8Rng::seed_from_u64(s)
}

pub(crate) fn sample_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Samples a movie manifest and its exact ground truth.
pub fn generate_movie(config: &SynthConfig) -> Result<(EmbryoMovie, GroundTruth), SynthError> {
    config.validate()?;
    let truth = truth::generate(config);
    let frames = truth
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| MovieFrame {
            t: f.t,
            planes: (0..config.plane_count).map(|p| format!("{}/frame_{i:04}_plane_{p}.png", config.embryo_id)).collect(),
        })
        .collect();
    let movie = EmbryoMovie {
        format_version: crate::model::FORMAT_VERSION,
        embryo_id: config.embryo_id.clone(),
        frames,
        image_size: (config.image_size, config.image_size),
        plane_spacing_um: 15.0,
        plane_count: config.plane_count,
    };
    movie.validate()?;
    Ok((movie, truth))
}

/// True stage of every frame, sampled from the dwell ranges and padded with
/// blastocyst frames.
pub(crate) fn sample_trajectory<R: Rng>(rng: &mut R, config: &SynthConfig) -> Vec<StageClass> {
    let mut stages = Vec::with_capacity(config.frames);
    for (k, d) in config.dwell.iter().enumerate() {
        let dwell = rng.random_range(d.min..=d.max) as usize;
        for _ in 0..dwell {
            if stages.len() == config.frames {
                return stages;
            }
            stages.push(StageClass::ORDERED[k]);
        }
    }
    stages.resize(config.frames, StageClass::Blastocyst);
    stages
}
