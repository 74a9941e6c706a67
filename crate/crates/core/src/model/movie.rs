use serde::{Deserialize, Serialize};

use super::stage::check_increasing;
use super::ModelError;

pub const FORMAT_VERSION: u32 = 1;

/// Focal planes per frame on the imaging system.
pub const DEFAULT_PLANE_COUNT: usize = 7;

fn default_image_size() -> (u32, u32) {
    (500, 500)
}

fn default_plane_spacing() -> f64 {
    15.0
}

fn default_plane_count() -> usize {
    DEFAULT_PLANE_COUNT
}

fn default_format_version() -> u32 {
    FORMAT_VERSION
}

/// One acquisition time with a reference to each focal-plane image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieFrame {
    /// Minutes since the start of imaging.
    pub t: f64,
    pub planes: Vec<String>,
}

/// Movie manifest: frame times and per-plane image references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbryoMovie {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub embryo_id: String,
    pub frames: Vec<MovieFrame>,
    #[serde(default = "default_image_size")]
    pub image_size: (u32, u32),
    #[serde(default = "default_plane_spacing")]
    pub plane_spacing_um: f64,
    #[serde(default = "default_plane_count")]
    pub plane_count: usize,
}

impl EmbryoMovie {
    pub fn new(embryo_id: impl Into<String>, frames: Vec<MovieFrame>) -> Result<Self, ModelError> {
        let movie = EmbryoMovie {
            format_version: FORMAT_VERSION,
            embryo_id: embryo_id.into(),
            frames,
            image_size: default_image_size(),
            plane_spacing_um: default_plane_spacing(),
            plane_count: DEFAULT_PLANE_COUNT,
        };
        movie.validate()?;
        Ok(movie)
    }

    /// Checks frame ordering and that every frame references every plane.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ModelError::FormatVersion(self.format_version));
        }
        if self.frames.is_empty() {
            return Err(ModelError::EmptyMovie);
        }
        for (index, f) in self.frames.iter().enumerate() {
            if f.planes.len() != self.plane_count {
                return Err(ModelError::PlaneCount { frame: index, expected: self.plane_count, found: f.planes.len() });
            }
        }
        let times: Vec<f64> = self.times();
        check_increasing(&times)
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
