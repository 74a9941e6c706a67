//! Ablation table over many evaluation reports.

use serde::{Deserialize, Serialize};

use super::EvaluationReport;
use crate::scalar::ratio;

/// Header of the ablation table, one row per setting.
pub const ABLATION_COLUMNS: [&str; 6] =
    ["setting", "embryos", "fragmentation_pct", "stage_pct", "blastomere_map", "pronuclei_map"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub embryos: usize,
    /// Low/high agreement in percent, pooled over frames.
    pub fragmentation_pct: Option<f64>,
    /// Stage accuracy in percent, pooled over frames.
    pub stage_pct: Option<f64>,
    /// Per-embryo mAP weighted by the number of true instances.
    pub blastomere_map: Option<f64>,
    pub pronuclei_map: Option<f64>,
}

/// Display name of a setting label such as `no_roi+no_dp`.
pub fn setting_name(label: &str) -> String {
    if label == "full" {
        return "Full Setting".to_string();
    }
    label
        .split('+')
        .map(|part| match part {
            "single_focus" => "Single Focus",
            "no_roi" => "No ROI from Zona",
            "no_dp" => "No Dynamic Programming",
            other => other,
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

fn setting_rank(label: &str) -> usize {
    match label {
        "full" => 0,
        "single_focus" => 1,
        "no_roi" => 2,
        "no_dp" => 3,
        _ => 4,
    }
}

#[derive(Default)]
struct Weighted {
    sum: f64,
    weight: f64,
}

impl Weighted {
    fn add(&mut self, value: f64, weight: f64) {
        self.sum += value * weight;
        self.weight += weight;
    }

    fn mean(&self) -> Option<f64> {
        (self.weight > 0.0).then(|| self.sum / self.weight)
    }
}

/// Groups reports by setting. Rows are ordered full, single focus, no ROI,
/// no DP, then any other combination by label.
pub fn ablation_table(reports: &[EvaluationReport]) -> Vec<AblationRow> {
    let mut labels: Vec<&str> = reports.iter().map(|r| r.setting.as_str()).collect();
    labels.sort_by(|a, b| setting_rank(a).cmp(&setting_rank(b)).then(a.cmp(b)));
    labels.dedup();
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<_> = reports.iter().filter(|r| r.setting == label).collect();
            let (mut agreeing, mut frag_frames, mut correct, mut stage_frames) = (0, 0, 0, 0);
            let (mut cells, mut pn) = (Weighted::default(), Weighted::default());
            for r in &group {
                if let Some(f) = &r.fragmentation {
                    agreeing += f.agreeing;
                    frag_frames += f.frames;
                }
                if let Some(s) = &r.stage {
                    correct += s.correct;
                    stage_frames += s.frames;
                }
                if let Some(c) = &r.cells {
                    cells.add(c.map, c.truths as f64);
                }
                if let Some(p) = &r.pronuclei {
                    pn.add(p.map, p.truths as f64);
                }
            }
            let pct = |hits: usize, n: usize| ratio::<f64>(hits, n).map(|x| 100.0 * x);
            AblationRow {
                setting: setting_name(label),
                embryos: group.len(),
                fragmentation_pct: pct(agreeing, frag_frames),
                stage_pct: pct(correct, stage_frames),
                blastomere_map: cells.mean(),
                pronuclei_map: pn.mean(),
            }
        })
        .collect()
}
