//! Evaluation records and aggregation.
//!
//! Raw results are JSON-lines — one [`MetricsRecord`] per line — so every
//! summary number can be recomputed from them. Summaries group by
//! (method, object) and report count, median, and mean pose error plus mean
//! solver cost, written as plot-ready CSV.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{ObjectModel, SymmetryKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which pose-distance variant a record's error uses. Chosen from the
/// object's declared symmetry: symmetric objects are scored with the
/// nearest-point (symmetry-aware) distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Add,
    AddS,
}

impl MetricKind {
    pub fn for_object(object: &ObjectModel) -> Self {
        match object.symmetry().kind {
            SymmetryKind::None => MetricKind::Add,
            _ => MetricKind::AddS,
        }
    }
}

/// One evaluated sample. `uncertainty_mm` is the candidate spread for
/// methods that produce one (the pipeline), `None` otherwise; the solver
/// counters are zero for methods that do not integrate an ODE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub object_id: String,
    pub sample_index: usize,
    pub error_mm: f64,
    pub metric: MetricKind,
    pub uncertainty_mm: Option<f64>,
    pub wall_time_s: f64,
    pub n_rhs_evals: usize,
    pub n_accepted_steps: usize,
    pub n_rejected_steps: usize,
}

pub fn write_metrics<W: Write>(w: &mut W, records: &[MetricsRecord]) -> Result<(), MetricsError> {
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| MetricsError::Parse { line: 0, msg: e.to_string() })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricsRecord>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| MetricsError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Median with the midpoint convention: the middle element for odd counts,
/// the average of the two middle elements for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median over non-finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregate of one (method, object) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub object_id: String,
    pub n: usize,
    pub median_error_mm: f64,
    pub mean_error_mm: f64,
    pub mean_rhs_evals: f64,
    pub mean_wall_time_s: f64,
}

/// Group records by (method, object_id) — rows ordered by first appearance —
/// and aggregate.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.object_id.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, object_id)| {
            let group: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| r.method == method && r.object_id == object_id)
                .collect();
            let errors: Vec<f64> = group.iter().map(|r| r.error_mm).collect();
            let n = group.len();
            SummaryRow {
                median_error_mm: median(&errors),
                mean_error_mm: errors.iter().sum::<f64>() / n as f64,
                mean_rhs_evals: group.iter().map(|r| r.n_rhs_evals as f64).sum::<f64>()
                    / n as f64,
                mean_wall_time_s: group.iter().map(|r| r.wall_time_s).sum::<f64>() / n as f64,
                method,
                object_id,
                n,
            }
        })
        .collect()
}

/// RFC-4180 field escaping: object ids like `box:14,9,6` contain commas and
/// must be quoted so the row stays machine-parseable.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_summary_csv<W: Write>(w: &mut W, rows: &[SummaryRow]) -> Result<(), MetricsError> {
    writeln!(
        w,
        "method,object_id,n,median_error_mm,mean_error_mm,mean_rhs_evals,mean_wall_time_s"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            csv_field(&r.method),
            csv_field(&r.object_id),
            r.n,
            r.median_error_mm,
            r.mean_error_mm,
            r.mean_rhs_evals,
            r.mean_wall_time_s
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: &str, object: &str, i: usize, err: f64) -> MetricsRecord {
        MetricsRecord {
            method: method.into(),
            object_id: object.into(),
            sample_index: i,
            error_mm: err,
            metric: MetricKind::AddS,
            uncertainty_mm: if i % 2 == 0 { Some(err / 2.0) } else { None },
            wall_time_s: 0.01 * (i + 1) as f64,
            n_rhs_evals: 10 * i,
            n_accepted_steps: i,
            n_rejected_steps: i / 2,
        }
    }

    #[test]
    fn json_lines_round_trip() {
        let records: Vec<MetricsRecord> = (0..20)
            .map(|i| record(if i < 12 { "ours" } else { "grid-match" }, "box", i, 0.3 * i as f64))
            .collect();
        let mut bytes = Vec::new();
        write_metrics(&mut bytes, &records).unwrap();
        let back = read_metrics(bytes.as_slice()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn malformed_line_is_reported_with_its_number() {
        let records = vec![record("ours", "box", 0, 1.0), record("ours", "box", 1, 2.0)];
        let mut bytes = Vec::new();
        write_metrics(&mut bytes, &records).unwrap();
        // Truncate the second record mid-JSON.
        let text = String::from_utf8(bytes).unwrap();
        let cut = text.len() - 25;
        let err = read_metrics(text[..cut].as_bytes()).unwrap_err();
        match err {
            MetricsError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other}"),
        }
    }

    #[test]
    fn median_follows_the_midpoint_convention() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 8.0]), 3.0);
        assert_eq!(median(&[2.0, 1.0]), 1.5);
    }

    #[test]
    fn summary_matches_an_independent_recomputation() {
        let mut records = Vec::new();
        for i in 0..17 {
            records.push(record("ours", "box", i, (i as f64 * 1.37).sin().abs() * 5.0));
        }
        for i in 0..9 {
            records.push(record("icp-global", "box", i, 1.0 + i as f64));
        }
        for i in 0..5 {
            records.push(record("ours", "cyl", i, 2.0 * i as f64));
        }
        let rows = summarize(&records);
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(),
            ["ours", "icp-global", "ours"]
        );

        // Recompute every aggregate by an independent pass (reverse order,
        // explicit accumulators).
        for row in &rows {
            let mut errs = Vec::new();
            let mut sum = 0.0;
            let mut rhs = 0.0;
            let mut wall = 0.0;
            for r in records.iter().rev() {
                if r.method == row.method && r.object_id == row.object_id {
                    errs.push(r.error_mm);
                    sum += r.error_mm;
                    rhs += r.n_rhs_evals as f64;
                    wall += r.wall_time_s;
                }
            }
            let n = errs.len();
            assert_eq!(row.n, n);
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = if n % 2 == 1 {
                errs[n / 2]
            } else {
                0.5 * (errs[n / 2 - 1] + errs[n / 2])
            };
            assert!((row.median_error_mm - med).abs() < 1e-9);
            assert!((row.mean_error_mm - sum / n as f64).abs() < 1e-9);
            assert!((row.mean_rhs_evals - rhs / n as f64).abs() < 1e-9);
            assert!((row.mean_wall_time_s - wall / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_has_one_row_per_group_and_parses_back() {
        let records: Vec<MetricsRecord> =
            (0..6).map(|i| record("ours", "box", i, i as f64)).collect();
        let rows = summarize(&records);
        let mut csv = Vec::new();
        write_summary_csv(&mut csv, &rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("method,object_id,n,median"));
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "ours");
        assert_eq!(fields[2], "6");
        // The CSV numbers parse back to the row values exactly (shortest
        // round-trip float formatting).
        assert_eq!(fields[3].parse::<f64>().unwrap(), rows[0].median_error_mm);
        assert_eq!(fields[4].parse::<f64>().unwrap(), rows[0].mean_error_mm);
    }

    #[test]
    fn object_ids_with_commas_are_csv_quoted() {
        let records = vec![record("ours", "box:14,9,6", 0, 1.0)];
        let mut csv = Vec::new();
        write_summary_csv(&mut csv, &summarize(&records)).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("ours,\"box:14,9,6\",1,"), "row: {row}");
        // Embedded quotes are doubled per RFC 4180.
        assert_eq!(csv_field("a\"b,c"), "\"a\"\"b,c\"");
        assert_eq!(csv_field("plain"), "plain");
    }

    #[test]
    fn metric_kind_tracks_symmetry() {
        use crate::sim::{make_shape, ShapeSpec};
        let boxy = make_shape(&ShapeSpec::Box { l: 14.0, w: 9.0, h: 6.0 }).unwrap();
        assert_eq!(MetricKind::for_object(&boxy), MetricKind::AddS);
        let bracket =
            make_shape(&ShapeSpec::LBracket { lx: 14.0, lz: 9.0, t: 3.0, w: 6.0 }).unwrap();
        assert_eq!(MetricKind::for_object(&bracket), MetricKind::Add);
    }
}
