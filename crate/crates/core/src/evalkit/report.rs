use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{FiveNumber, SubjectMetrics};
use crate::model::ModelKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Classification,
    Ood,
    Generalization,
    Refsize,
    Embsize,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Classification => "classification",
            ExperimentKind::Ood => "ood",
            ExperimentKind::Generalization => "generalization",
            ExperimentKind::Refsize => "refsize",
            ExperimentKind::Embsize => "embsize",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            ExperimentKind::Classification,
            ExperimentKind::Ood,
            ExperimentKind::Generalization,
            ExperimentKind::Refsize,
            ExperimentKind::Embsize,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Mean per-fold cost of one model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub fit_seconds: f64,
    pub inference_seconds: f64,
    pub model_bytes: usize,
    /// Mean serialized reference-set size per test subject.
    pub reference_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: ModelKind,
    /// Sweep point (`m=16`, `m=all`, `d=8`), empty for single-point runs.
    pub point: String,
    /// `accuracy`, `auroc` or `heldout_accuracy`.
    pub metric: String,
    pub metrics: SubjectMetrics,
    /// Scored windows per subject.
    pub n_windows: BTreeMap<String, usize>,
    pub boxplot: FiveNumber,
    pub timing: Timing,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    /// Classes withheld from training (OOD and generalization runs).
    pub heldout_classes: Vec<usize>,
    pub n_train_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub dataset: String,
    /// Fully resolved run configuration.
    pub config: serde_json::Value,
    pub folds: Vec<FoldSummary>,
    pub results: Vec<ModelResult>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn find(&self, model: ModelKind, point: &str, metric: &str) -> Option<&ModelResult> {
        self.results
            .iter()
            .find(|r| r.model == model && r.point == point && r.metric == metric)
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(fmt)?;
    for r in rows {
        w.write_record(&r).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `subjects.csv`, `boxplot.csv` and `timing.csv`
/// into `out_dir` (created if missing) and returns their paths.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json_path = out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

    let exp = report.experiment.name();
    let subjects_path = out_dir.join("subjects.csv");
    let mut rows = Vec::new();
    for r in &report.results {
        for (s, v) in &r.metrics.per_subject {
            rows.push(vec![
                exp.to_string(),
                r.model.name().to_string(),
                r.point.clone(),
                r.metric.clone(),
                s.clone(),
                v.to_string(),
                r.n_windows.get(s).copied().unwrap_or(0).to_string(),
            ]);
        }
    }
    write_rows(
        &subjects_path,
        &["experiment", "model", "point", "metric", "subject_id", "value", "n_windows"],
        rows,
    )?;

    let box_path = out_dir.join("boxplot.csv");
    let rows = report
        .results
        .iter()
        .map(|r| {
            let b = &r.boxplot;
            vec![
                r.model.name().to_string(),
                r.point.clone(),
                r.metric.clone(),
                r.metrics.per_subject.len().to_string(),
                r.metrics.mean.to_string(),
                r.metrics.std.to_string(),
                b.min.to_string(),
                b.q1.to_string(),
                b.median.to_string(),
                b.q3.to_string(),
                b.max.to_string(),
            ]
        })
        .collect();
    write_rows(
        &box_path,
        &["model", "point", "metric", "n_subjects", "mean", "std", "min", "q1", "median", "q3", "max"],
        rows,
    )?;

    let timing_path = out_dir.join("timing.csv");
    let mut seen = std::collections::BTreeSet::new();
    let rows = report
        .results
        .iter()
        .filter(|r| seen.insert((r.model, r.point.clone())))
        .map(|r| {
            let t = &r.timing;
            vec![
                r.model.name().to_string(),
                r.point.clone(),
                t.fit_seconds.to_string(),
                t.inference_seconds.to_string(),
                t.model_bytes.to_string(),
                t.reference_bytes.to_string(),
            ]
        })
        .collect();
    write_rows(
        &timing_path,
        &["model", "point", "fit_seconds", "inference_seconds", "model_bytes", "reference_bytes"],
        rows,
    )?;
    Ok(vec![json_path, subjects_path, box_path, timing_path])
}
