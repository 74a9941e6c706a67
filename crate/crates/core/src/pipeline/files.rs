//! NDJSON files of precomputed backend outputs.
//!
//! Each file starts with a header line `{"format_version":1,"kind":...}`
//! followed by one JSON object per line.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::backend::{
    BackendError, BackendSuite, FragmentationScorer, FrameRef, InstanceDetector, StageClassifier, ZonaSegmenter,
};
use super::{PipelineConfig, PipelineError, Step};
use crate::gating::middle_planes;
use crate::geometry::{embryo_roi, GeometryError, Roi};
use crate::model::{CandidateKind, EmbryoMovie, SegmentationMap, FORMAT_VERSION};
use crate::{Candidate, ProbVector};

pub const ZONA_FILE: &str = "zona.ndjson";
pub const FRAGMENTATION_FILE: &str = "fragmentation.ndjson";
pub const STAGE_FILE: &str = "stage.ndjson";
pub const CELLS_FILE: &str = "cells.ndjson";
pub const PRONUCLEI_FILE: &str = "pronuclei.ndjson";

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: expected header kind {expected:?} version {FORMAT_VERSION}, found {found:?}")]
    Header { path: PathBuf, expected: String, found: String },
    #[error("{path}:{line}: duplicate entry")]
    Duplicate { path: PathBuf, line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NdjsonHeader {
    pub format_version: u32,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonaLine {
    pub t: f64,
    pub plane: usize,
    pub map: SegmentationMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationLine {
    pub t: f64,
    pub plane: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLine {
    pub t: f64,
    pub p: ProbVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLine {
    pub t: f64,
    pub plane: usize,
    pub candidates: Vec<Candidate>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io { path: path.to_path_buf(), source }
}

/// Reads an NDJSON file whose header has the given kind.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, FileError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let parse = |line: usize, text: &str| -> Result<serde_json::Value, FileError> {
        serde_json::from_str(text).map_err(|source| FileError::Parse { path: path.to_path_buf(), line, source })
    };
    let header_text = lines.next().transpose().map_err(io_err(path))?.unwrap_or_default();
    let header: Option<NdjsonHeader> = parse(1, &header_text).ok().and_then(|v| serde_json::from_value(v).ok());
    match header {
        Some(h) if h.kind == kind && h.format_version == FORMAT_VERSION => {}
        _ => {
            return Err(FileError::Header { path: path.to_path_buf(), expected: kind.to_string(), found: header_text })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| FileError::Parse { path: path.to_path_buf(), line: i + 2, source })?;
        out.push(value);
    }
    Ok(out)
}

fn write_ndjson<T: Serialize>(path: &Path, kind: &str, items: &[T]) -> Result<(), FileError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let encode = |source| FileError::Parse { path: path.to_path_buf(), line: 0, source };
    let header = NdjsonHeader { format_version: FORMAT_VERSION, kind: kind.to_string() };
    writeln!(w, "{}", serde_json::to_string(&header).map_err(encode)?).map_err(io_err(path))?;
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).map_err(encode)?).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Runs every backend on every frame and writes the outputs to `dir`.
///
/// Fragmentation and detections are computed within the ROI that `config`
/// derives from the zona output, and detectors run on every frame
/// regardless of stage, so the files can serve any later run.
pub fn write_backend_outputs(
    dir: &Path,
    movie: &EmbryoMovie,
    backends: &BackendSuite<'_>,
    config: &PipelineConfig,
) -> Result<(), PipelineError> {
    let planes = match config.middle_planes {
        Some(p) => p,
        None => middle_planes(movie.plane_count)?,
    };
    let (width, height) = movie.image_size;
    let (mut zona, mut frag, mut stage, mut cells, mut pronuclei) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, frame) in movie.frames.iter().enumerate() {
        let fr = FrameRef { index: i, frame };
        let fail = |step: Step| move |e: BackendError| PipelineError::BackendFailure { step, frame: i, message: e.0 };
        let map = backends.zona.segment(fr, planes[1]).map_err(fail(Step::Zona))?;
        let roi = if config.use_roi {
            match embryo_roi(&map, config.roi_side) {
                Ok(r) => r,
                Err(GeometryError::NoEmbryo) => Roi::centered(config.roi_side, width, height)?,
                Err(e) => return Err(e.into()),
            }
        } else {
            Roi::full(width, height)
        };
        zona.push(ZonaLine { t: frame.t, plane: planes[1], map });
        for &p in &planes {
            let score = backends.fragmentation.score(fr, p, &roi).map_err(fail(Step::Fragmentation))?;
            frag.push(FragmentationLine { t: frame.t, plane: p, score });
            let found = backends.cells.detect(CandidateKind::Cell, fr, p, &roi).map_err(fail(Step::Cells))?;
            cells.push(CandidateLine { t: frame.t, plane: p, candidates: found });
            let found = backends.pronuclei.detect(CandidateKind::Pronucleus, fr, p, &roi).map_err(fail(Step::Pronuclei))?;
            pronuclei.push(CandidateLine { t: frame.t, plane: p, candidates: found });
        }
        let p = backends.stage.classify(fr, &planes, &roi).map_err(fail(Step::Stage))?;
        stage.push(StageLine { t: frame.t, p });
    }
    write_ndjson(&dir.join(ZONA_FILE), "zona", &zona)?;
    write_ndjson(&dir.join(FRAGMENTATION_FILE), "fragmentation", &frag)?;
    write_ndjson(&dir.join(STAGE_FILE), "stage", &stage)?;
    write_ndjson(&dir.join(CELLS_FILE), "cells", &cells)?;
    write_ndjson(&dir.join(PRONUCLEI_FILE), "pronuclei", &pronuclei)?;
    Ok(())
}

type Key = (u64, usize);

fn key(t: f64, plane: usize) -> Key {
    (t.to_bits(), plane)
}

fn index<T>(path: &Path, items: Vec<T>, k: impl Fn(&T) -> Key) -> Result<HashMap<Key, T>, FileError> {
    let mut map = HashMap::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        if map.insert(k(&item), item).is_some() {
            return Err(FileError::Duplicate { path: path.to_path_buf(), line: i + 2 });
        }
    }
    Ok(map)
}

/// Serves precomputed outputs, looked up by frame time and plane. The ROI
/// passed in is ignored: stored outputs already reflect the ROI used when
/// they were produced.
#[derive(Debug, Clone)]
pub struct FileBackend {
    zona: HashMap<Key, SegmentationMap>,
    fragmentation: HashMap<Key, f64>,
    stage: HashMap<Key, ProbVector>,
    cells: HashMap<Key, Vec<Candidate>>,
    pronuclei: HashMap<Key, Vec<Candidate>>,
}

impl FileBackend {
    pub fn load(dir: &Path) -> Result<Self, FileError> {
        let path = dir.join(ZONA_FILE);
        let zona = index(&path, read_ndjson::<ZonaLine>(&path, "zona")?, |l| key(l.t, l.plane))?;
        let path = dir.join(FRAGMENTATION_FILE);
        let fragmentation = index(&path, read_ndjson::<FragmentationLine>(&path, "fragmentation")?, |l| key(l.t, l.plane))?;
        let path = dir.join(STAGE_FILE);
        let stage = index(&path, read_ndjson::<StageLine>(&path, "stage")?, |l| key(l.t, 0))?;
        let path = dir.join(CELLS_FILE);
        let cells = index(&path, read_ndjson::<CandidateLine>(&path, "cells")?, |l| key(l.t, l.plane))?;
        let path = dir.join(PRONUCLEI_FILE);
        let pronuclei = index(&path, read_ndjson::<CandidateLine>(&path, "pronuclei")?, |l| key(l.t, l.plane))?;
        Ok(FileBackend {
            zona: zona.into_iter().map(|(k, l)| (k, l.map)).collect(),
            fragmentation: fragmentation.into_iter().map(|(k, l)| (k, l.score)).collect(),
            stage: stage.into_iter().map(|(k, l)| (k, l.p)).collect(),
            cells: cells.into_iter().map(|(k, l)| (k, l.candidates)).collect(),
            pronuclei: pronuclei.into_iter().map(|(k, l)| (k, l.candidates)).collect(),
        })
    }
}

fn missing(what: &str, frame: FrameRef<'_>, plane: Option<usize>) -> BackendError {
    match plane {
        Some(p) => BackendError::new(format!("no {what} output for t={} plane {p}", frame.t())),
        None => BackendError::new(format!("no {what} output for t={}", frame.t())),
    }
}

impl ZonaSegmenter for FileBackend {
    fn segment(&self, frame: FrameRef<'_>, plane: usize) -> Result<SegmentationMap, BackendError> {
        self.zona.get(&key(frame.t(), plane)).cloned().ok_or_else(|| missing("zona", frame, Some(plane)))
    }
}

impl FragmentationScorer for FileBackend {
    fn score(&self, frame: FrameRef<'_>, plane: usize, _roi: &Roi) -> Result<f64, BackendError> {
        self.fragmentation.get(&key(frame.t(), plane)).copied().ok_or_else(|| missing("fragmentation", frame, Some(plane)))
    }
}

impl StageClassifier for FileBackend {
    fn classify(&self, frame: FrameRef<'_>, _planes: &[usize], _roi: &Roi) -> Result<ProbVector, BackendError> {
        self.stage.get(&key(frame.t(), 0)).copied().ok_or_else(|| missing("stage", frame, None))
    }
}

impl InstanceDetector for FileBackend {
    fn detect(&self, kind: CandidateKind, frame: FrameRef<'_>, plane: usize, _roi: &Roi) -> Result<Vec<Candidate>, BackendError> {
        let (map, what) = match kind {
            CandidateKind::Cell => (&self.cells, "cell"),
            CandidateKind::Pronucleus => (&self.pronuclei, "pronucleus"),
        };
        map.get(&key(frame.t(), plane)).cloned().ok_or_else(|| missing(what, frame, Some(plane)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::json::{to_canonical_string_with, FloatStyle};
    use crate::pipeline::run_pipeline;
    use crate::synth::{generate_movie, SynthBackend, SynthConfig};

    #[test]
    fn file_backend_reproduces_synth_run() {
        let mut sc = SynthConfig { seed: 9, frames: 60, image_size: 160, ..SynthConfig::default() };
        sc.noise.logit_sigma = 1.0;
        sc.noise.mask_jitter_px = 1.5;
        sc.noise.confidence_sigma = 0.05;
        sc.noise.fragmentation_sigma = 0.3;
        sc.noise.seg_flip_rate = 0.02;
        sc.fragmentation_grades = [1.0, 0.0, 0.0, 0.0];
        let (movie, truth) = generate_movie(&sc).unwrap();
        let synth = SynthBackend::new(truth, sc).unwrap();
        let config = PipelineConfig { roi_side: 120, ..PipelineConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        write_backend_outputs(dir.path(), &movie, &BackendSuite::uniform(&synth), &config).unwrap();
        let files = FileBackend::load(dir.path()).unwrap();

        let a = run_pipeline(&movie, &BackendSuite::uniform(&synth), &config).unwrap();
        let b = run_pipeline(&movie, &BackendSuite::uniform(&files), &config).unwrap();
        let text = |r| to_canonical_string_with(r, FloatStyle::RoundTrip).unwrap();
        assert_eq!(text(&a), text(&b));
    }

    #[test]
    fn header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ndjson");
        fs::write(&path, "{\"format_version\":1,\"kind\":\"zona\"}\n").unwrap();
        assert!(matches!(read_ndjson::<StageLine>(&path, "stage"), Err(FileError::Header { .. })));
        fs::write(&path, "{\"format_version\":1,\"kind\":\"stage\"}\n{\"t\":0,\"p\":[1]}\n").unwrap();
        assert!(matches!(read_ndjson::<StageLine>(&path, "stage"), Err(FileError::Parse { line: 2, .. })));
    }
}
