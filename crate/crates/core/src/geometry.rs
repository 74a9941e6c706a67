//! Region-of-interest extraction, mask overlap and cross-plane merging.

use serde::{Deserialize, Serialize};

use crate::model::{BinaryMask, CandidateKind, InstanceCandidate, ModelError, SegmentationMap};
use crate::scalar::Real;

/// Crop side used by every downstream network.
pub const DEFAULT_ROI_SIDE: u32 = 328;

/// Default IoU at which two candidates are treated as the same object.
pub const DEFAULT_MERGE_IOU: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("segmentation has no zona or inside-zona pixels")]
    NoEmbryo,
    #[error("roi side {side} does not fit a {width}x{height} image")]
    RoiTooLarge { side: u32, width: u32, height: u32 },
    #[error("roi {roi:?} lies outside a {width}x{height} grid")]
    RoiOutOfBounds { roi: Roi, width: u32, height: u32 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("both masks are empty")]
    EmptyUnion,
    #[error("cannot merge cell and pronucleus candidates together")]
    MixedKinds,
}

impl From<ModelError> for GeometryError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DimensionMismatch { left, right } => GeometryError::DimensionMismatch { left, right },
            other => unreachable!("geometry operations only surface dimension errors: {other}"),
        }
    }
}

/// Rectangular window into a source image, `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Roi {
    /// The whole image.
    pub fn full(width: u32, height: u32) -> Roi {
        Roi { x: 0, y: 0, width, height }
    }

    /// A `side` x `side` window centered on `(cx, cy)`, shifted to fit.
    pub fn square_at(cx: u32, cy: u32, side: u32, width: u32, height: u32) -> Result<Roi, GeometryError> {
        if side == 0 || side > width || side > height {
            return Err(GeometryError::RoiTooLarge { side, width, height });
        }
        let place = |c: u32, extent: u32| c.saturating_sub(side / 2).min(extent - side);
        Ok(Roi { x: place(cx, width), y: place(cy, height), width: side, height: side })
    }

    /// Fallback window centered in the image.
    pub fn centered(side: u32, width: u32, height: u32) -> Result<Roi, GeometryError> {
        Roi::square_at(width / 2, height / 2, side, width, height)
    }

    pub fn center(&self) -> (u32, u32) {
        (self.x + self.width / 2, self.y + self.height / 2)
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && self.x as u64 + self.width as u64 <= width as u64
            && self.y as u64 + self.height as u64 <= height as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

/// Fixed-size window centered on the embryo (zona plus its interior).
///
/// The center is the middle of the tight bounding box of embryo pixels,
/// rounded half up. Near the border the window is shifted, never shrunk.
pub fn embryo_roi(map: &SegmentationMap, side: u32) -> Result<Roi, GeometryError> {
    let (w, h) = map.dims();
    if side == 0 || side > w || side > h {
        return Err(GeometryError::RoiTooLarge { side, width: w, height: h });
    }
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (i, label) in map.labels().iter().enumerate() {
        if label.is_embryo() {
            let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x0 == u32::MAX {
        return Err(GeometryError::NoEmbryo);
    }
    Roi::square_at((x0 + x1).div_ceil(2), (y0 + y1).div_ceil(2), side, w, h)
}

/// Intersection over union of two equally sized masks.
pub fn mask_iou<T: Real>(a: &BinaryMask, b: &BinaryMask) -> Result<T, GeometryError> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Err(GeometryError::EmptyUnion);
    }
    Ok(T::count(inter) / T::count(union))
}

/// Keeps the most confident candidate of every overlapping group.
///
/// Greedy suppression over all planes: candidates are visited by descending
/// confidence (then lower plane, then smaller bbox x), and each kept
/// candidate removes every remaining one with IoU at or above
/// `iou_threshold`, including candidates from its own plane. Output is in
/// visiting order.
pub fn merge_across_planes<T: Real>(
    candidates: &[InstanceCandidate<T>],
    iou_threshold: T,
) -> Result<Vec<InstanceCandidate<T>>, GeometryError> {
    let Some(first) = candidates.first() else {
        return Ok(Vec::new());
    };
    let kind: CandidateKind = first.kind();
    let dims = first.mask().dims();
    for c in candidates {
        if c.kind() != kind {
            return Err(GeometryError::MixedKinds);
        }
        if c.mask().dims() != dims {
            return Err(GeometryError::DimensionMismatch { left: dims, right: c.mask().dims() });
        }
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.confidence()
            .partial_cmp(&ca.confidence())
            .expect("confidences are finite")
            .then(ca.plane().cmp(&cb.plane()))
            .then(ca.bbox().x.cmp(&cb.bbox().x))
    });

    let mut suppressed = vec![false; candidates.len()];
    let mut kept = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(candidates[i].clone());
        for &j in &order[rank + 1..] {
            if !suppressed[j] && mask_iou::<T>(candidates[i].mask(), candidates[j].mask())? >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(kept)
}

/// Grids that can be cut down to a region of interest.
pub trait Crop: Sized {
    fn crop(&self, roi: &Roi) -> Result<Self, GeometryError>;
}

impl Crop for BinaryMask {
    fn crop(&self, roi: &Roi) -> Result<Self, GeometryError> {
        let (w, h) = self.dims();
        if !roi.fits(w, h) {
            return Err(GeometryError::RoiOutOfBounds { roi: *roi, width: w, height: h });
        }
        let (w, rw) = (w as usize, roi.width as usize);
        let (x0, y0) = (roi.x as usize, roi.y as usize);
        let (x1, y1) = (x0 + rw, y0 + roi.height as usize);
        let mut out = Vec::new();
        for (s, e) in self.intervals() {
            for y in (s / w).max(y0)..=((e - 1) / w).min(y1.saturating_sub(1)) {
                let row_start = y * w;
                let lo = s.max(row_start).max(row_start + x0);
                let hi = e.min(row_start + w).min(row_start + x1);
                if hi > lo {
                    let base = (y - y0) * rw;
                    out.push((base + lo - row_start - x0, base + hi - row_start - x0));
                }
            }
        }
        Ok(BinaryMask::from_intervals(roi.width, roi.height, out).expect("roi has positive size"))
    }
}

impl Crop for SegmentationMap {
    fn crop(&self, roi: &Roi) -> Result<Self, GeometryError> {
        let (w, h) = self.dims();
        if !roi.fits(w, h) {
            return Err(GeometryError::RoiOutOfBounds { roi: *roi, width: w, height: h });
        }
        let labels = (roi.y..roi.y + roi.height)
            .flat_map(|y| {
                let start = y as usize * w as usize + roi.x as usize;
                self.labels()[start..start + roi.width as usize].iter().copied()
            })
            .collect();
        Ok(SegmentationMap::new(roi.width, roi.height, labels).expect("roi has positive size"))
    }
}

/// Sub-grid copy of the ROI window.
pub fn crop_mask<M: Crop>(grid: &M, roi: &Roi) -> Result<M, GeometryError> {
    grid.crop(roi)
}

/// Places a cropped mask back into a `width` x `height` canvas at `roi`.
pub fn paste_mask(cropped: &BinaryMask, roi: &Roi, width: u32, height: u32) -> Result<BinaryMask, GeometryError> {
    if cropped.dims() != (roi.width, roi.height) {
        return Err(GeometryError::DimensionMismatch { left: cropped.dims(), right: (roi.width, roi.height) });
    }
    if !roi.fits(width, height) {
        return Err(GeometryError::RoiOutOfBounds { roi: *roi, width, height });
    }
    let rw = roi.width as usize;
    let mut out = Vec::new();
    for (s, e) in cropped.intervals() {
        for y in s / rw..=(e - 1) / rw {
            let lo = s.max(y * rw) - y * rw;
            let hi = e.min((y + 1) * rw) - y * rw;
            let base = (y + roi.y as usize) * width as usize + roi.x as usize;
            out.push((base + lo, base + hi));
        }
    }
    Ok(BinaryMask::from_intervals(width, height, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ZonaClass;

    fn disk_map(w: u32, h: u32, cx: i64, cy: i64, r: i64) -> SegmentationMap {
        let mut map = SegmentationMap::filled(w, h, ZonaClass::InsideWell).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as i64 - cx, y as i64 - cy);
                if dx * dx + dy * dy <= r * r {
                    map.set(x, y, ZonaClass::InsideZona);
                }
            }
        }
        map
    }

    fn rect(w: u32, h: u32, x0: u32, y0: u32, rw: u32, rh: u32) -> BinaryMask {
        let bits: Vec<bool> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh
            })
            .collect();
        BinaryMask::from_bits(w, h, &bits).unwrap()
    }

    #[test]
    fn centered_disk_gives_centered_window() {
        let roi = embryo_roi(&disk_map(500, 500, 250, 250, 150), 328).unwrap();
        assert_eq!(roi, Roi { x: 86, y: 86, width: 328, height: 328 });
        assert_eq!(roi.center(), (250, 250));
    }

    #[test]
    fn window_shifts_at_border() {
        let roi = embryo_roi(&disk_map(500, 500, 10, 250, 100), 328).unwrap();
        assert_eq!((roi.x, roi.width), (0, 328));
        let roi = embryo_roi(&disk_map(500, 500, 495, 490, 100), 328).unwrap();
        assert_eq!((roi.x, roi.y), (172, 172));
    }

    #[test]
    fn no_embryo_pixels() {
        let map = SegmentationMap::filled(500, 500, ZonaClass::OutsideWell).unwrap();
        assert_eq!(embryo_roi(&map, 328), Err(GeometryError::NoEmbryo));
        assert!(matches!(embryo_roi(&disk_map(100, 100, 50, 50, 10), 328), Err(GeometryError::RoiTooLarge { .. })));
    }

    #[test]
    fn iou_cases() {
        let a = rect(30, 30, 0, 0, 10, 10);
        let b = rect(30, 30, 5, 0, 10, 10);
        let c = rect(30, 30, 20, 20, 5, 5);
        assert_eq!(mask_iou::<f64>(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou::<f64>(&a, &c).unwrap(), 0.0);
        // 5x10 strip shared, union 150 pixels.
        assert!((mask_iou::<f64>(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let other = rect(10, 10, 0, 0, 2, 2);
        assert!(matches!(mask_iou::<f64>(&a, &other), Err(GeometryError::DimensionMismatch { .. })));
    }

    fn cand(mask: BinaryMask, conf: f64, plane: u8) -> InstanceCandidate<f64> {
        InstanceCandidate::new(mask, conf, plane, CandidateKind::Cell).unwrap()
    }

    #[test]
    fn same_disk_on_three_planes_keeps_best() {
        let m = rect(40, 40, 10, 10, 8, 8);
        let cands = vec![cand(m.clone(), 0.7, 2), cand(m.clone(), 0.9, 3), cand(m, 0.8, 4)];
        let merged = merge_across_planes(&cands, 0.5).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].confidence(), 0.9);
        assert_eq!(merged[0].plane(), 3);
    }

    #[test]
    fn merge_threshold_controls_partial_overlap() {
        let a = cand(rect(30, 30, 0, 0, 10, 10), 0.9, 2);
        let b = cand(rect(30, 30, 5, 0, 10, 10), 0.8, 3);
        let c = cand(rect(30, 30, 20, 20, 5, 5), 0.8, 3);
        assert_eq!(merge_across_planes(&[a.clone(), c.clone()], 0.5).unwrap().len(), 2);
        assert_eq!(merge_across_planes(&[a.clone(), b.clone()], 0.5).unwrap().len(), 2);
        let strict = merge_across_planes(&[b, a], 0.3).unwrap();
        assert_eq!(strict.len(), 1);
        assert_eq!(strict[0].confidence(), 0.9);
        assert_eq!(merge_across_planes(std::slice::from_ref(&c), 0.5).unwrap(), vec![c]);
    }

    #[test]
    fn equal_confidence_prefers_lower_plane() {
        let m = rect(20, 20, 2, 2, 5, 5);
        let merged = merge_across_planes(&[cand(m.clone(), 0.8, 4), cand(m, 0.8, 2)], 0.5).unwrap();
        assert_eq!(merged[0].plane(), 2);
    }

    #[test]
    fn merge_rejects_mixed_kinds() {
        let m = rect(20, 20, 2, 2, 5, 5);
        let p = InstanceCandidate::new(m.clone(), 0.5, 2, CandidateKind::Pronucleus).unwrap();
        assert_eq!(merge_across_planes(&[cand(m, 0.5, 2), p], 0.5), Err(GeometryError::MixedKinds));
    }

    #[test]
    fn crop_full_window_is_identity() {
        let m = rect(20, 15, 3, 4, 6, 7);
        assert_eq!(crop_mask(&m, &Roi::full(20, 15)).unwrap(), m);
        let map = disk_map(20, 15, 8, 7, 4);
        assert_eq!(crop_mask(&map, &Roi::full(20, 15)).unwrap(), map);
    }

    #[test]
    fn crop_preserves_inside_area_and_clips_straddling() {
        let m = rect(50, 50, 10, 10, 5, 5);
        let roi = Roi { x: 8, y: 8, width: 20, height: 20 };
        let cropped = crop_mask(&m, &roi).unwrap();
        assert_eq!(cropped.area(), 25);
        assert_eq!(paste_mask(&cropped, &roi, 50, 50).unwrap(), m);

        // Straddles the left edge of the window: columns 5..15 with x >= 8
        // kept, so 7 columns by 5 rows.
        let straddle = rect(50, 50, 5, 10, 10, 5);
        assert_eq!(crop_mask(&straddle, &roi).unwrap().area(), 35);
        let outside = Roi { x: 40, y: 0, width: 20, height: 20 };
        assert!(matches!(crop_mask(&m, &outside), Err(GeometryError::RoiOutOfBounds { .. })));
    }
}
