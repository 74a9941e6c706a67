use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_trajectory, sample_weighted, sub_rng, SynthConfig};
use crate::model::{BinaryMask, SegmentationMap, StageClass, ZonaClass, FORMAT_VERSION};

const TAG_TRAJECTORY: u64 = 1;
const TAG_GEOMETRY: u64 = 2;
const TAG_GRADE: u64 = 3;
const TAG_PRONUCLEI: u64 = 4;

/// Disk of pixels whose centers satisfy `(x - cx)^2 + (y - cy)^2 <= r^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    /// Inclusive column span of the disk on row `y`, clipped to `[0, width)`.
    pub fn row_span(&self, y: u32, width: u32) -> Option<(u32, u32)> {
        let dy = y as f64 - self.cy;
        let rem = self.r * self.r - dy * dy;
        if rem < 0.0 {
            return None;
        }
        let half = rem.sqrt();
        let lo = (self.cx - half).ceil().max(0.0);
        let hi = (self.cx + half).floor().min(width as f64 - 1.0);
        (hi >= lo).then_some((lo as u32, hi as u32))
    }

    pub fn rows(&self, height: u32) -> std::ops::Range<u32> {
        let lo = (self.cy - self.r).ceil().max(0.0);
        let hi = (self.cy + self.r).floor() + 1.0;
        let hi = hi.clamp(0.0, height as f64);
        if hi <= lo {
            return 0..0;
        }
        lo as u32..hi as u32
    }

    pub fn mask(&self, width: u32, height: u32) -> BinaryMask {
        let w = width as usize;
        let spans = self.rows(height).filter_map(|y| {
            self.row_span(y, width).map(|(a, b)| (y as usize * w + a as usize, y as usize * w + b as usize + 1))
        });
        BinaryMask::from_intervals(width, height, spans).expect("positive image size")
    }
}

/// Well and zona placement for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZonaGeometry {
    pub well: Circle,
    /// Outer boundary of the zona pellucida.
    pub outer: Circle,
    /// Inner boundary; everything inside is the embryo proper.
    pub inner: Circle,
}

impl ZonaGeometry {
    pub fn segmentation_map(&self, width: u32, height: u32) -> SegmentationMap {
        let mut map = SegmentationMap::filled(width, height, ZonaClass::OutsideWell).expect("positive image size");
        let w = width as usize;
        let labels = map.labels_mut();
        for (circle, class) in [(self.well, ZonaClass::InsideWell), (self.outer, ZonaClass::Zona), (self.inner, ZonaClass::InsideZona)] {
            for y in circle.rows(height) {
                if let Some((a, b)) = circle.row_span(y, width) {
                    let row = y as usize * w;
                    labels[row + a as usize..=row + b as usize].fill(class);
                }
            }
        }
        map
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub t: f64,
    pub stage: StageClass,
    pub zona: ZonaGeometry,
    /// One disk per blastomere on 1..=8 cell frames, empty otherwise.
    pub cells: Vec<Circle>,
    pub pronuclei: Vec<Circle>,
}

/// Exact ground truth of a synthetic movie. Pixel grids are rendered on
/// demand from the stored geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format_version: u32,
    pub embryo_id: String,
    pub image_size: (u32, u32),
    /// Constant over the movie.
    pub fragmentation_grade: u8,
    pub frames: Vec<TruthFrame>,
}

impl GroundTruth {
    pub fn stages(&self) -> Vec<StageClass> {
        self.frames.iter().map(|f| f.stage).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn segmentation_map(&self, frame: usize) -> SegmentationMap {
        let (w, h) = self.image_size;
        self.frames[frame].zona.segmentation_map(w, h)
    }

    pub fn cell_masks(&self, frame: usize) -> Vec<BinaryMask> {
        let (w, h) = self.image_size;
        self.frames[frame].cells.iter().map(|c| c.mask(w, h)).collect()
    }

    pub fn pronucleus_masks(&self, frame: usize) -> Vec<BinaryMask> {
        let (w, h) = self.image_size;
        self.frames[frame].pronuclei.iter().map(|c| c.mask(w, h)).collect()
    }
}

/// Cell disks for `n` blastomeres inside the zona interior. Total area is
/// roughly constant, so radii shrink by `sqrt(n)`.
fn place_cells(inner: &Circle, n: usize, rotation: f64) -> Vec<Circle> {
    let r1 = 0.8 * inner.r;
    if n == 1 {
        return vec![Circle { cx: inner.cx, cy: inner.cy, r: r1 }];
    }
    let r = r1 / (n as f64).sqrt();
    let ring = (inner.r - r - 2.0).max(0.0);
    (0..n)
        .map(|k| {
            let a = rotation + 2.0 * PI * k as f64 / n as f64;
            Circle { cx: inner.cx + ring * a.cos(), cy: inner.cy + ring * a.sin(), r }
        })
        .collect()
}

fn place_pronuclei(cell: &Circle, count: usize) -> Vec<Circle> {
    let offset = 0.3 * cell.r;
    let r = 0.15 * cell.r;
    [-offset, offset].iter().take(count).map(|dx| Circle { cx: cell.cx + dx, cy: cell.cy, r }).collect()
}

/// Pronucleus count at position `x` in `[0, 1)` of the 1-cell interval:
/// none, then one, then two, then one, then none again.
fn pronucleus_count(x: f64, dist: &[f64; 3]) -> usize {
    let b1 = dist[0] / 2.0;
    let b2 = b1 + dist[1] / 2.0;
    let b3 = b2 + dist[2];
    let b4 = b3 + dist[1] / 2.0;
    match x {
        x if x < b1 => 0,
        x if x < b2 => 1,
        x if x < b3 => 2,
        x if x < b4 => 1,
        _ => 0,
    }
}

pub(super) fn generate(config: &SynthConfig) -> GroundTruth {
    let size = config.image_size as f64;
    let stages = sample_trajectory(&mut sub_rng(config.seed, TAG_TRAJECTORY, 0, 0), config);
    let grade = sample_weighted(&mut sub_rng(config.seed, TAG_GRADE, 0, 0), &config.fragmentation_grades) as u8;

    let mut geo = sub_rng(config.seed, TAG_GEOMETRY, 0, 0);
    let center = size / 2.0;
    let (jitter, drift, bound) = (0.03 * size, size / 500.0, 0.04 * size);
    let mut cx = center + geo.random_range(-jitter..=jitter);
    let mut cy = center + geo.random_range(-jitter..=jitter);
    let well = Circle { cx: center, cy: center, r: 0.47 * size };
    let outer_r = 0.29 * size;
    let inner_r = outer_r - 0.03 * size;

    let mut pn = sub_rng(config.seed, TAG_PRONUCLEI, 0, 0);
    let pn_offset: f64 = pn.random();
    let pn_dist = config.pronucleus_distribution();
    let one_cell_frames = stages.iter().filter(|&&s| s == StageClass::Cell1).count().max(1);

    let mut rotation = 0.0;
    let mut frames = Vec::with_capacity(stages.len());
    for (i, &stage) in stages.iter().enumerate() {
        if i > 0 {
            cx = (cx + geo.random_range(-drift..=drift)).clamp(center - bound, center + bound);
            cy = (cy + geo.random_range(-drift..=drift)).clamp(center - bound, center + bound);
        }
        if i == 0 || stages[i - 1] != stage {
            rotation = geo.random_range(0.0..2.0 * PI);
        }
        let outer = Circle { cx, cy, r: outer_r };
        let inner = Circle { cx, cy, r: inner_r };
        let cells = stage.cell_count().map(|n| place_cells(&inner, n, rotation)).unwrap_or_default();
        let pronuclei = if stage == StageClass::Cell1 {
            let x = (i as f64 + pn_offset) / one_cell_frames as f64;
            place_pronuclei(&cells[0], pronucleus_count(x, &pn_dist))
        } else {
            Vec::new()
        };
        frames.push(TruthFrame {
            t: i as f64 * config.cadence_minutes,
            stage,
            zona: ZonaGeometry { well, outer, inner },
            cells,
            pronuclei,
        });
    }

    GroundTruth {
        format_version: FORMAT_VERSION,
        embryo_id: config.embryo_id.clone(),
        image_size: (config.image_size, config.image_size),
        fragmentation_grade: grade,
        frames,
    }
}
