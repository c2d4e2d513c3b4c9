//! Run reports: per-step metric rows and per-(layer, algorithm) summaries.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::avg_sup_maxvio;
use crate::error::{Error, Result};

pub const STEPS_FILE: &str = "steps.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One routed batch of one algorithm on one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub layer: usize,
    pub algo: String,
    pub max_vio: f64,
    /// Raw-score total of the assignment.
    pub score: f64,
    /// Final dual objective of the batch; BIP runs only.
    pub dual_obj: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub algo: String,
    pub layer: usize,
    pub avg_max_vio: f64,
    pub sup_max_vio: f64,
    pub total_score: f64,
    /// Only filled when timing was requested, so default reports stay byte-stable.
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    steps: Vec<StepRecord>,
    summary: Vec<SummaryRecord>,
}

/// Summary of the rows of one `(algo, layer)` series, in row order.
fn summarize(algo: &str, layer: usize, rows: &[&StepRecord], wall_ms: Option<f64>) -> Result<SummaryRecord> {
    let series: Vec<f64> = rows.iter().map(|r| r.max_vio).collect();
    let (avg, sup) = avg_sup_maxvio(&series)?;
    Ok(SummaryRecord {
        algo: algo.to_string(),
        layer,
        avg_max_vio: avg,
        sup_max_vio: sup,
        total_score: rows.iter().map(|r| r.score).sum(),
        wall_ms,
    })
}

impl RunReport {
    /// Builds the summary from the step rows.
    ///
    /// `series` lists the `(algo, layer, wall_ms)` cells in summary order;
    /// every cell needs at least one row.
    pub fn from_steps(steps: Vec<StepRecord>, series: &[(String, usize, Option<f64>)]) -> Result<Self> {
        if steps.is_empty() || series.is_empty() {
            return Err(Error::Empty("report has no rows".into()));
        }
        let summary = series
            .iter()
            .map(|(algo, layer, wall)| {
                let rows: Vec<&StepRecord> = steps.iter().filter(|r| &r.algo == algo && r.layer == *layer).collect();
                summarize(algo, *layer, &rows, *wall)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { steps, summary })
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn summary(&self) -> &[SummaryRecord] {
        &self.summary
    }

    pub fn summary_for(&self, algo: &str, layer: usize) -> Option<&SummaryRecord> {
        self.summary.iter().find(|s| s.algo == algo && s.layer == layer)
    }

    /// MaxVio series of one cell in step order.
    pub fn series(&self, algo: &str, layer: usize) -> Vec<f64> {
        self.steps
            .iter()
            .filter(|r| r.algo == algo && r.layer == layer)
            .map(|r| r.max_vio)
            .collect()
    }
}

/// Writes `steps.csv` and `summary.json` into `out_dir`, creating it.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    if report.steps.is_empty() {
        return Err(Error::Empty("refusing to emit an empty report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let steps_path = out_dir.join(STEPS_FILE);
    let file = File::create(&steps_path).map_err(|e| Error::io(&steps_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in &report.steps {
        w.serialize(row)
            .map_err(|e| Error::Serialize(format!("{}: {e}", steps_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&steps_path, e))?;

    let summary_path = out_dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(&report.summary).map_err(|e| Error::Serialize(e.to_string()))?;
    json.push('\n');
    let mut file = File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    file.write_all(json.as_bytes()).map_err(|e| Error::io(&summary_path, e))
}

pub fn read_steps_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .map(|rec| {
            rec.map_err(|e: csv::Error| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn read_summary_json(path: &Path) -> Result<Vec<SummaryRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })
}

/// Recomputes each summary record from the step rows; returns the first
/// mismatching `(algo, layer)`.
pub fn check_summary(steps: &[StepRecord], summary: &[SummaryRecord]) -> Result<()> {
    for s in summary {
        let rows: Vec<&StepRecord> = steps.iter().filter(|r| r.algo == s.algo && r.layer == s.layer).collect();
        let again = summarize(&s.algo, s.layer, &rows, s.wall_ms)?;
        if &again != s {
            return Err(Error::Invariant(format!(
                "summary of {} on layer {} does not match its step rows",
                s.algo, s.layer
            )));
        }
    }
    Ok(())
}
