//! Matrix and edge-list ingestion, canonical JSON reports and experiment configs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dyad::DyadMatrix;
use crate::error::{Error, Result};
use crate::sim::ExperimentConfig;

pub const SCHEMA_VERSION: &str = "1.0";

/// Tolerance within which duplicate edges `(i,j)` and `(j,i)` must agree.
pub const DUPLICATE_EDGE_TOLERANCE: f64 = 1e-9;

/// A network together with optional unit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub matrix: DyadMatrix,
    pub labels: Option<Vec<String>>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn records(text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, column: 0, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn is_number(s: &str) -> bool {
    s.parse::<f64>().is_ok()
}

/// Parses an `n × n` comma-separated grid with an optional header row and an
/// optional leading label column.
pub fn parse_matrix_str(text: &str) -> Result<LabeledMatrix> {
    let mut rows = records(text)?;
    if rows.is_empty() {
        return Err(Error::Parse { line: 1, column: 0, message: "empty matrix file".into() });
    }
    let header = if rows[0].1.iter().skip(1).any(|f| !is_number(f)) { Some(rows.remove(0)) } else { None };
    let row_labelled = rows.first().is_some_and(|(_, r)| !r.is_empty() && !is_number(&r[0]));
    let n = rows.len();
    let mut values = Vec::with_capacity(n * n);
    let mut row_labels = Vec::new();
    for (line, fields) in &rows {
        let (label, cells) = if row_labelled { (Some(&fields[0]), &fields[1..]) } else { (None, &fields[..]) };
        if cells.len() != n {
            return Err(Error::Parse {
                line: *line,
                column: 0,
                message: format!("row has {} values, expected {n}", cells.len()),
            });
        }
        row_labels.extend(label.cloned());
        for (c, cell) in cells.iter().enumerate() {
            let v = cell.parse::<f64>().map_err(|_| Error::Parse {
                line: *line,
                column: c + 1 + usize::from(row_labelled),
                message: format!("`{cell}` is not a number"),
            })?;
            values.push(v);
        }
    }
    let labels = match header {
        Some((line, h)) => {
            let names = if h.len() == n + 1 { h[1..].to_vec() } else { h };
            if names.len() != n {
                return Err(Error::Parse {
                    line,
                    column: 0,
                    message: format!("header has {} labels, expected {n}", names.len()),
                });
            }
            Some(names)
        }
        None if row_labelled => Some(row_labels),
        None => None,
    };
    Ok(LabeledMatrix { matrix: DyadMatrix::from_row_major(n, values)?, labels })
}

pub fn parse_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    parse_matrix_str(&read_text(path)?)
}

/// Writes a grid that [`parse_matrix_csv`] reads back entry-for-entry.
pub fn write_matrix_csv(path: &Path, m: &DyadMatrix, labels: Option<&[String]>) -> Result<()> {
    let mut out = String::new();
    if let Some(l) = labels {
        out.push_str("id,");
        out.push_str(&l.join(","));
        out.push('\n');
    }
    for i in 0..m.n() {
        if let Some(l) = labels {
            let _ = write!(out, "{},", l[i]);
        }
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Parses `i,j,weight` lines. Endpoints are 1-based indices when every endpoint is
/// a positive integer, otherwise unit labels. With `known_labels`, every endpoint
/// must be one of them and the matrix follows their order.
pub fn parse_edge_list_str(
    text: &str,
    n_declared: Option<usize>,
    known_labels: Option<&[String]>,
) -> Result<LabeledMatrix> {
    let mut rows = records(text)?;
    if rows.first().is_some_and(|(_, r)| r.len() >= 3 && !is_number(&r[2])) {
        rows.remove(0);
    }
    for (line, r) in &rows {
        if r.len() != 3 {
            return Err(Error::Parse {
                line: *line,
                column: 0,
                message: format!("edge has {} fields, expected 3", r.len()),
            });
        }
    }
    let numeric = known_labels.is_none()
        && rows.iter().all(|(_, r)| r[..2].iter().all(|f| f.parse::<usize>().is_ok_and(|k| k >= 1)));

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    if let Some(known) = known_labels {
        for (k, l) in known.iter().enumerate() {
            index.insert(l.clone(), k);
        }
        labels = known.to_vec();
    }
    let mut edges = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        let w = r[2].parse::<f64>().map_err(|_| Error::Parse {
            line: *line,
            column: 3,
            message: format!("`{}` is not a number", r[2]),
        })?;
        let mut ends = [0usize; 2];
        for (e, field) in ends.iter_mut().zip(&r[..2]) {
            *e = if numeric {
                let k = field.parse::<usize>().expect("checked numeric") - 1;
                if n_declared.is_some_and(|n| k >= n) {
                    return Err(Error::UnknownLabel(field.clone()));
                }
                k
            } else if let Some(&k) = index.get(field) {
                k
            } else if known_labels.is_some() {
                return Err(Error::UnknownLabel(field.clone()));
            } else {
                index.insert(field.clone(), labels.len());
                labels.push(field.clone());
                labels.len() - 1
            };
        }
        edges.push((ends[0], ends[1], w, &r[0], &r[1]));
    }

    let inferred = if numeric { edges.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0) } else { labels.len() };
    let n = match n_declared {
        Some(n) if !numeric && n < inferred => return Err(Error::UnknownLabel(labels[n].clone())),
        Some(n) => n,
        None => inferred,
    };
    if n < 3 {
        return Err(Error::TooSmall { n });
    }
    let mut values = vec![0.0; n * n];
    let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
    for (i, j, w, li, lj) in edges {
        if !w.is_finite() {
            return Err(Error::NonFiniteEntry { i, j });
        }
        if i == j {
            if w != 0.0 {
                return Err(Error::SelfLoop { label: li.clone(), weight: w });
            }
            continue;
        }
        let key = (i.min(j), i.max(j));
        if let Some(&first) = seen.get(&key) {
            if (first - w).abs() > DUPLICATE_EDGE_TOLERANCE {
                return Err(Error::ConflictingDuplicateEdge { i: li.clone(), j: lj.clone(), first, second: w });
            }
            continue;
        }
        seen.insert(key, w);
        values[i * n + j] = w;
        values[j * n + i] = w;
    }
    let labels = if numeric {
        None
    } else {
        // units declared beyond the labelled ones stay unnamed
        labels.extend((labels.len()..n).map(|k| format!("unit{}", k + 1)));
        Some(labels)
    };
    Ok(LabeledMatrix { matrix: DyadMatrix::from_row_major(n, values)?, labels })
}

pub fn parse_edge_list(path: &Path, n_declared: Option<usize>) -> Result<LabeledMatrix> {
    parse_edge_list_str(&read_text(path)?, n_declared, None)
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    let hash = Sha256::digest(&bytes);
    Ok(hash.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(role: impl Into<String>, path: &Path) -> Result<Self> {
        Ok(Self { role: role.into(), path: path.display().to_string(), sha256: file_digest(path)? })
    }
}

/// Binned replicate counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `counts.len() + 1` increasing bin edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Maximum number of bins emitted by [`freedman_diaconis`].
pub const MAX_BINS: usize = 1000;

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Histogram with Freedman–Diaconis width `2·IQR·m^{-1/3}`.
pub fn freedman_diaconis(values: &[f64]) -> Option<Histogram> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let bins = if hi > lo && width > 0.0 { (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS) } else { 1 };
    let step = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins && hi > lo { hi } else { lo + k as f64 * step }).collect();
    let mut counts = vec![0u64; bins];
    for v in &sorted {
        let k = (((v - lo) / step).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Some(Histogram { edges, counts })
}

/// A machine-readable command result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
    /// Wall-clock seconds; only present when requested, since it breaks byte equality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<f64>,
}

impl ReportDocument {
    pub fn new(command: &str, inputs: Vec<InputDigest>, result: &impl Serialize) -> Result<Self> {
        let result = serde_json::to_value(result).map_err(|e| Error::NonFiniteReport(e.to_string()))?;
        Ok(Self { schema_version: SCHEMA_VERSION.into(), command: command.into(), inputs, result, histogram: None, timing: None })
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::NonFiniteReport(e.to_string()))?;
        canonical_json(&value)
    }
}

/// Renders `v` with sorted object keys and every float in `{:.16e}` form (17
/// significant digits). `null` only arises from non-finite floats and is rejected.
pub fn canonical_json(v: &Value) -> Result<String> {
    let mut out = String::new();
    render(v, "$", 0, &mut out)?;
    out.push('\n');
    Ok(out)
}

fn render(v: &Value, path: &str, depth: usize, out: &mut String) -> Result<()> {
    let indent = |d: usize, out: &mut String| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Null => return Err(Error::NonFiniteReport(path.to_string())),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(num) => {
            if num.is_f64() {
                let x = num.as_f64().expect("f64 number");
                if !x.is_finite() {
                    return Err(Error::NonFiniteReport(path.to_string()));
                }
                let _ = write!(out, "{x:.16e}");
            } else {
                out.push_str(&num.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            // numeric arrays stay on one line
            let flat = items.iter().all(|x| x.is_number());
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                if !flat {
                    out.push('\n');
                    indent(depth + 1, out);
                }
                render(item, &format!("{path}[{k}]"), depth + 1, out)?;
            }
            if !flat {
                out.push('\n');
                indent(depth, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('\n');
                indent(depth + 1, out);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                render(&map[key], &format!("{path}.{key}"), depth + 1, out)?;
            }
            out.push('\n');
            indent(depth, out);
            out.push('}');
        }
    }
    Ok(())
}

/// Row-major copy of a dense matrix for reports.
pub fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

pub fn parse_experiment_config_str(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    parse_experiment_config_str(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_without_labels() {
        let m = parse_matrix_str("0,1,2\n1,0,3\n2,3,0\n").unwrap();
        assert_eq!(m.labels, None);
        assert_eq!(m.matrix.get(0, 1), 1.0);
        assert_eq!(m.matrix.get(0, 2), 2.0);
        assert_eq!(m.matrix.get(1, 2), 3.0);
    }

    #[test]
    fn header_and_row_labels() {
        let text = "id,u1,u2,u3\nu1,0,1,2\nu2,1,0,3\nu3,2,3,0\n";
        let m = parse_matrix_str(text).unwrap();
        assert_eq!(m.labels.unwrap(), vec!["u1", "u2", "u3"]);
        assert_eq!(m.matrix.get(2, 1), 3.0);
        let bare = parse_matrix_str("u1,u2,u3\n0,1,2\n1,0,3\n2,3,0\n").unwrap();
        assert_eq!(bare.labels.unwrap(), vec!["u1", "u2", "u3"]);
    }

    #[test]
    fn ragged_row_reports_line() {
        match parse_matrix_str("0,1,2\n1,0\n2,3,0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_matrix_str("0,1,2\n1,x,3\n2,3,0\n"), Err(Error::Parse { line: 2, column: 2, .. })));
        assert!(matches!(parse_matrix_str("0,1,2\n9,0,3\n2,3,0\n"), Err(Error::AsymmetricBeyondTolerance { .. })));
    }

    #[test]
    fn edge_list_examples() {
        let m = parse_edge_list_str("1,2,5.0\n", Some(3), None).unwrap();
        assert_eq!(m.matrix.get(0, 1), 5.0);
        assert_eq!(m.matrix.get(1, 0), 5.0);
        assert_eq!(m.matrix.get(0, 2), 0.0);
        assert!(matches!(parse_edge_list_str("1,1,2.0\n", Some(3), None), Err(Error::SelfLoop { .. })));
        assert!(matches!(
            parse_edge_list_str("1,2,5\n2,1,4\n", Some(3), None),
            Err(Error::ConflictingDuplicateEdge { .. })
        ));
        assert!(parse_edge_list_str("1,2,5\n2,1,5\n", Some(3), None).is_ok());
        assert!(matches!(parse_edge_list_str("1,4,5\n", Some(3), None), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn labelled_edge_list() {
        let text = "i,j,weight\nann,bob,1.5\nbob,cat,2\n";
        let m = parse_edge_list_str(text, None, None).unwrap();
        assert_eq!(m.labels.as_deref().unwrap(), ["ann", "bob", "cat"]);
        assert_eq!(m.matrix.get(1, 2), 2.0);
        let known = vec!["cat".to_string(), "bob".to_string(), "ann".to_string()];
        let m = parse_edge_list_str(text, None, Some(&known)).unwrap();
        assert_eq!(m.matrix.get(2, 1), 1.5);
        assert!(matches!(parse_edge_list_str("ann,dan,1\n", None, Some(&known)), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn canonical_json_is_sorted_and_fixed_width() {
        let v = serde_json::json!({"b": 0.1, "a": [1.0, 2], "c": {"z": true, "y": "s"}});
        let s = canonical_json(&v).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("1.0000000000000001e-1"));
        assert!(s.contains("[1.0000000000000000e0,2]"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64().unwrap(), 0.1);
        assert!(matches!(canonical_json(&serde_json::json!({"x": null})), Err(Error::NonFiniteReport(_))));
    }

    #[test]
    fn histogram_covers_all_values() {
        let vals: Vec<f64> = (0..1000).map(|k| ((k * 37) % 1000) as f64 / 10.0).collect();
        let h = freedman_diaconis(&vals).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        assert_eq!(*h.edges.last().unwrap(), 99.9);
        let flat = freedman_diaconis(&[2.0; 5]).unwrap();
        assert_eq!(flat.counts, vec![5]);
    }
}
