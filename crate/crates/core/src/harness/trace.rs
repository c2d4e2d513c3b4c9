//! Score traces on disk.
//!
//! Format: CSV with header `step,score_0,...,score_{m-1}`, one row per token,
//! rows grouped by ascending step. Multi-layer traces use one file per layer
//! named `<prefix>_layer<i>.csv`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::routing::{ingest_score, ScoreMatrix};

/// Per-layer file name for trace prefix `base`.
///
/// A trailing `.csv` on `base` is dropped before the suffix is added.
pub fn layer_trace_path(base: &Path, layer: usize) -> PathBuf {
    let s = base.to_string_lossy();
    let stem = s.strip_suffix(".csv").unwrap_or(&s);
    PathBuf::from(format!("{stem}_layer{layer}.csv"))
}

/// Trace file of `layer`: the per-layer file if it exists, else `base`
/// itself for single-layer runs.
pub fn resolve_layer_trace(base: &Path, layer: usize, layers: usize) -> PathBuf {
    let per_layer = layer_trace_path(base, layer);
    if per_layer.exists() || layers > 1 {
        per_layer
    } else {
        base.to_path_buf()
    }
}

/// Writes batches as steps `1..=len`, values in shortest round-trip form.
pub fn write_trace(path: &Path, batches: &[ScoreMatrix]) -> Result<()> {
    let Some(first) = batches.first() else {
        return Err(Error::Empty("trace has no batches".into()));
    };
    let m = first.cols();
    if let Some(bad) = batches.iter().find(|b| b.cols() != m) {
        return Err(Error::Structure(format!(
            "trace batches mix {m} and {} experts",
            bad.cols()
        )));
    }
    let ser = |e: csv::Error| Error::Serialize(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["step".to_string()];
    header.extend((0..m).map(|j| format!("score_{j}")));
    w.write_record(&header).map_err(ser)?;
    let mut record = Vec::with_capacity(m + 1);
    for (idx, batch) in batches.iter().enumerate() {
        for row in batch.iter_rows() {
            record.clear();
            record.push((idx + 1).to_string());
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(ser)?;
        }
    }
    let mut file = w.into_inner().map_err(|e| Error::Serialize(format!("{}: {e}", path.display())))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace into one matrix per step, in file order.
///
/// Every step must hold the same number of tokens.
pub fn read_trace(path: &Path) -> Result<Vec<ScoreMatrix>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file, expected a header".into())),
    };
    let m = header.len().saturating_sub(1);
    let header_ok = header.get(0).map(str::trim) == Some("step")
        && header
            .iter()
            .skip(1)
            .enumerate()
            .all(|(j, h)| h.trim() == format!("score_{j}"));
    if !header_ok || m < 2 {
        return Err(parse_err(
            1,
            "header must be step,score_0,...,score_{m-1} with m >= 2".into(),
        ));
    }

    let mut batches = Vec::new();
    let mut current: Option<(u64, u64, Vec<f64>)> = None;
    let mut rows_per_step: Option<(usize, u64)> = None;
    let mut finish = |step_line: u64, data: Vec<f64>, batches: &mut Vec<ScoreMatrix>| -> Result<()> {
        let rows = data.len() / m;
        match rows_per_step {
            None => rows_per_step = Some((rows, step_line)),
            Some((expected, _)) if expected != rows => {
                return Err(parse_err(
                    step_line,
                    format!("step starting here has {rows} tokens, earlier steps have {expected}"),
                ));
            }
            _ => {}
        }
        batches.push(ScoreMatrix::new(rows, m, data)?);
        Ok(())
    };

    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != m + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields (step + {m} scores), found {}", m + 1, rec.len()),
            ));
        }
        let step: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("step {:?} is not a non-negative integer", &rec[0])))?;
        let mut values = Vec::with_capacity(m);
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("score_{j} {field:?} is not a number")))?;
            let v = ingest_score(v).map_err(|e| parse_err(line, format!("score_{j}: {e}")))?;
            values.push(v);
        }
        match current.as_mut() {
            Some((s, _, data)) if *s == step => data.extend(values),
            Some((s, _, _)) if *s > step => {
                return Err(parse_err(line, format!("step {step} after step {s}; steps must ascend")));
            }
            _ => {
                if let Some((_, start, data)) = current.take() {
                    finish(start, data, &mut batches)?;
                }
                current = Some((step, line, values));
            }
        }
    }
    match current {
        Some((_, start, data)) => finish(start, data, &mut batches)?,
        None => return Err(parse_err(1, "trace has a header but no rows".into())),
    }
    Ok(batches)
}
