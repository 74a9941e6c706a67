//! Run-length binary masks and 4-class zona segmentation maps.
//!
//! Masks are stored row-major: pixel `(x, y)` has linear index `y * width + x`.
//! Runs alternate background/foreground and always start with a background
//! run, which may be empty.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Axis-aligned pixel box, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Binary mask stored as canonical row-major run lengths.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "MaskRecord", into = "MaskRecord")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct MaskRecord {
    w: u32,
    h: u32,
    rle: Vec<u32>,
}

impl TryFrom<MaskRecord> for BinaryMask {
    type Error = ModelError;

    fn try_from(r: MaskRecord) -> Result<Self, ModelError> {
        BinaryMask::new(r.w, r.h, r.rle)
    }
}

impl From<BinaryMask> for MaskRecord {
    fn from(m: BinaryMask) -> Self {
        MaskRecord { w: m.width, h: m.height, rle: m.runs }
    }
}

fn pixel_count(width: u32, height: u32) -> Result<usize, ModelError> {
    if width == 0 || height == 0 {
        return Err(ModelError::EmptyGrid);
    }
    Ok(width as usize * height as usize)
}

impl BinaryMask {
    /// Builds a mask from run lengths, which must sum to `width * height`.
    /// Zero-length inner runs are folded so equal masks compare equal.
    pub fn new(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, ModelError> {
        let n = pixel_count(width, height)?;
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != n as u64 {
            return Err(ModelError::RunLengthSum { expected: n, found: total });
        }
        let mut intervals = Vec::new();
        let mut pos = 0usize;
        for (i, &r) in runs.iter().enumerate() {
            let end = pos + r as usize;
            if i % 2 == 1 && r > 0 {
                intervals.push((pos, end));
            }
            pos = end;
        }
        Ok(Self::from_sorted_intervals(width, height, intervals))
    }

    pub fn empty(width: u32, height: u32) -> Result<Self, ModelError> {
        let n = pixel_count(width, height)?;
        Ok(BinaryMask { width, height, runs: vec![n as u32] })
    }

    /// Encodes a row-major pixel grid.
    pub fn from_bits(width: u32, height: u32, bits: &[bool]) -> Result<Self, ModelError> {
        let n = pixel_count(width, height)?;
        if bits.len() != n {
            return Err(ModelError::GridSize { expected: n, found: bits.len() });
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in bits {
            if b != current {
                runs.push(len);
                len = 0;
                current = b;
            }
            len += 1;
        }
        runs.push(len);
        Ok(BinaryMask { width, height, runs })
    }

    /// Builds a mask from half-open foreground index ranges. Ranges may be
    /// unsorted or overlapping; anything past the grid is clipped.
    pub fn from_intervals(
        width: u32,
        height: u32,
        intervals: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, ModelError> {
        let n = pixel_count(width, height)?;
        let mut iv: Vec<(usize, usize)> = intervals
            .into_iter()
            .map(|(s, e)| (s.min(n), e.min(n)))
            .filter(|(s, e)| e > s)
            .collect();
        iv.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(iv.len());
        for (s, e) in iv {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Ok(Self::from_sorted_intervals(width, height, merged))
    }

    // Intervals must be sorted, disjoint, non-adjacent-merged by the caller
    // or adjacent ones are merged here.
    fn from_sorted_intervals(width: u32, height: u32, intervals: Vec<(usize, usize)>) -> Self {
        let n = width as usize * height as usize;
        let mut runs = Vec::with_capacity(intervals.len() * 2 + 1);
        let mut pos = 0usize;
        let mut fg_start: Option<usize> = None;
        let mut fg_end = 0usize;
        for (s, e) in intervals {
            match fg_start {
                Some(_) if s == fg_end => fg_end = e,
                Some(start) => {
                    runs.push((start - pos) as u32);
                    runs.push((fg_end - start) as u32);
                    pos = fg_end;
                    fg_start = Some(s);
                    fg_end = e;
                }
                None => {
                    fg_start = Some(s);
                    fg_end = e;
                }
            }
        }
        if let Some(start) = fg_start {
            runs.push((start - pos) as u32);
            runs.push((fg_end - start) as u32);
            pos = fg_end;
        }
        if pos < n || runs.is_empty() {
            runs.push((n - pos) as u32);
        }
        BinaryMask { width, height, runs }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Half-open linear index ranges of foreground pixels, in order.
    pub fn intervals(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut pos = 0usize;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r as usize;
            (i % 2 == 1).then_some((start, pos))
        })
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = vec![false; self.width as usize * self.height as usize];
        for (s, e) in self.intervals() {
            bits[s..e].fill(true);
        }
        bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = y as usize * self.width as usize + x as usize;
        self.intervals().any(|(s, e)| s <= idx && idx < e)
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as usize).sum()
    }

    /// Tight bounding box of the foreground, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let w = self.width as usize;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut any = false;
        for (s, e) in self.intervals() {
            any = true;
            let (ys, ye) = (s / w, (e - 1) / w);
            y0 = y0.min(ys);
            y1 = y1.max(ye);
            if ys == ye {
                x0 = x0.min(s % w);
                x1 = x1.max((e - 1) % w);
            } else {
                // Run wraps across a row boundary, so it touches both edges.
                x0 = 0;
                x1 = w - 1;
            }
        }
        any.then(|| BBox { x: x0 as u32, y: y0 as u32, w: (x1 - x0 + 1) as u32, h: (y1 - y0 + 1) as u32 })
    }

    /// Foreground pixels shared with `other`.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize, ModelError> {
        if self.dims() != other.dims() {
            return Err(ModelError::DimensionMismatch { left: self.dims(), right: other.dims() });
        }
        let a: Vec<_> = self.intervals().collect();
        let b: Vec<_> = other.intervals().collect();
        let (mut i, mut j, mut shared) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                shared += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(shared)
    }
}

/// Per-pixel class of a zona pellucida segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ZonaClass {
    OutsideWell = 0,
    InsideWell = 1,
    Zona = 2,
    InsideZona = 3,
}

impl ZonaClass {
    pub const ALL: [ZonaClass; 4] = [ZonaClass::OutsideWell, ZonaClass::InsideWell, ZonaClass::Zona, ZonaClass::InsideZona];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<ZonaClass> {
        Self::ALL.get(index).copied()
    }

    /// Zona or the space inside it.
    pub fn is_embryo(self) -> bool {
        matches!(self, ZonaClass::Zona | ZonaClass::InsideZona)
    }
}

/// Row-major 4-class segmentation grid.
///
/// Serialized as `{"w": W, "h": H, "runs": [[class, length], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SegmentationRecord", into = "SegmentationRecord")]
pub struct SegmentationMap {
    width: u32,
    height: u32,
    labels: Vec<ZonaClass>,
}

#[derive(Serialize, Deserialize)]
struct SegmentationRecord {
    w: u32,
    h: u32,
    runs: Vec<(u8, u32)>,
}

impl TryFrom<SegmentationRecord> for SegmentationMap {
    type Error = ModelError;

    fn try_from(r: SegmentationRecord) -> Result<Self, ModelError> {
        let mut labels = Vec::new();
        for (class, len) in r.runs {
            let class = ZonaClass::from_index(class as usize).ok_or(ModelError::UnknownZonaClass(class))?;
            labels.extend(std::iter::repeat_n(class, len as usize));
        }
        SegmentationMap::new(r.w, r.h, labels)
    }
}

impl From<SegmentationMap> for SegmentationRecord {
    fn from(m: SegmentationMap) -> Self {
        let mut runs: Vec<(u8, u32)> = Vec::new();
        for &l in &m.labels {
            match runs.last_mut() {
                Some((c, n)) if *c == l as u8 => *n += 1,
                _ => runs.push((l as u8, 1)),
            }
        }
        SegmentationRecord { w: m.width, h: m.height, runs }
    }
}

impl SegmentationMap {
    pub fn new(width: u32, height: u32, labels: Vec<ZonaClass>) -> Result<Self, ModelError> {
        let n = pixel_count(width, height)?;
        if labels.len() != n {
            return Err(ModelError::GridSize { expected: n, found: labels.len() });
        }
        Ok(SegmentationMap { width, height, labels })
    }

    pub fn filled(width: u32, height: u32, class: ZonaClass) -> Result<Self, ModelError> {
        let n = pixel_count(width, height)?;
        Ok(SegmentationMap { width, height, labels: vec![class; n] })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[ZonaClass] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [ZonaClass] {
        &mut self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> ZonaClass {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, class: ZonaClass) {
        self.labels[y as usize * self.width as usize + x as usize] = class;
    }
}
