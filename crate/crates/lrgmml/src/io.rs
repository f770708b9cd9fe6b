//! File formats: dataset loaders (CSV and libsvm-style), the text model
//! format, results CSVs, and the aggregated plot-data CSV.
//!
//! All floating-point output uses either Rust's shortest round-trip
//! representation (results files) or 17 significant digits (model files), so
//! every file the artifact writes can be read back by its own loaders
//! without loss.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grassmann::StiefelPoint;
use crate::objective::MetricModel;
use crate::pipeline::{Dataset, Method, ResultRecord};
use crate::spd::SpdMatrix;

const MODEL_MAGIC: &str = "LRGMML v1";
pub const RESULTS_HEADER: &str = "dataset,method,rank,t,run,error,seconds,iterations";

/// Which CSV column carries the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Writes a fully materialized buffer; nothing is written until the content
/// exists, so earlier validation failures leave no partial file behind.
pub fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn class_ids(raw: Vec<String>) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let mut ids = Vec::with_capacity(raw.len());
    for label in raw {
        let id = match names.iter().position(|n| *n == label) {
            Some(i) => i,
            None => {
                names.push(label);
                names.len() - 1
            }
        };
        ids.push(id);
    }
    (ids, names)
}

/// Loads a comma-separated dataset: every column but the label column is a
/// numeric feature; labels may be arbitrary strings and are mapped to dense
/// class ids in first-appearance order.
pub fn load_csv(path: &Path, label_column: LabelColumn, has_header: bool) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;

    for (line_idx, line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if has_header && line_idx == 0 {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    path: path_str,
                    line: line_no,
                    msg: format!("ragged row: expected {w} cells, found {}", cells.len()),
                });
            }
            _ => {}
        }
        let label_idx = match label_column {
            LabelColumn::Last => cells.len() - 1,
            LabelColumn::Index(i) => {
                if i >= cells.len() {
                    return Err(Error::Parse {
                        path: path_str,
                        line: line_no,
                        msg: format!("label column {i} out of range for {} cells", cells.len()),
                    });
                }
                i
            }
        };
        let mut row = Vec::with_capacity(cells.len() - 1);
        for (col_idx, cell) in cells.iter().enumerate() {
            if col_idx == label_idx {
                continue;
            }
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: line_no,
                msg: format!("column {}: invalid number '{}'", col_idx + 1, cell.trim()),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: line_no,
                    msg: format!("column {}: non-finite feature value", col_idx + 1),
                });
            }
            row.push(value);
        }
        rows.push(row);
        raw_labels.push(cells[label_idx].trim().to_string());
    }

    if rows.is_empty() {
        return Err(Error::Parse {
            path: path_str,
            line: 0,
            msg: "file contains no data rows".into(),
        });
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::Parse {
            path: path_str,
            line: 1,
            msg: "rows carry a label but no features".into(),
        });
    }
    let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let (labels, label_names) = class_ids(raw_labels);
    Ok(Dataset {
        name: dataset_name(path),
        features,
        labels,
        label_names,
    })
}

/// Loads a libsvm-style file: lines of `label idx:val ...` with 1-based,
/// strictly ascending indices. Missing indices are zero; the dimension is
/// the largest index seen anywhere in the file.
pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut raw_labels = Vec::new();
    let mut sparse_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut d = 0usize;

    for (line_idx, line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("non-empty line has a first token");
        let mut row = Vec::new();
        let mut prev_idx = 0usize;
        for token in tokens {
            let (idx_str, val_str) = token.split_once(':').ok_or_else(|| Error::Parse {
                path: path_str.clone(),
                line: line_no,
                msg: format!("malformed feature token '{token}' (expected idx:val)"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: line_no,
                msg: format!("invalid feature index '{idx_str}'"),
            })?;
            if idx == 0 || idx <= prev_idx {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: line_no,
                    msg: format!(
                        "feature indices must be 1-based and ascending (index {idx} after {prev_idx})"
                    ),
                });
            }
            let value: f64 = val_str.parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: line_no,
                msg: format!("invalid feature value '{val_str}'"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: line_no,
                    msg: format!("non-finite feature value at index {idx}"),
                });
            }
            prev_idx = idx;
            d = d.max(idx);
            row.push((idx - 1, value));
        }
        raw_labels.push(label.to_string());
        sparse_rows.push(row);
    }

    if sparse_rows.is_empty() {
        return Err(Error::Parse {
            path: path_str,
            line: 0,
            msg: "file contains no data rows".into(),
        });
    }
    if d == 0 {
        return Err(Error::Parse {
            path: path_str,
            line: 1,
            msg: "no feature indices found in the file".into(),
        });
    }
    let mut features = DMatrix::zeros(sparse_rows.len(), d);
    for (i, row) in sparse_rows.iter().enumerate() {
        for &(j, v) in row {
            features[(i, j)] = v;
        }
    }
    let (labels, label_names) = class_ids(raw_labels);
    Ok(Dataset {
        name: dataset_name(path),
        features,
        labels,
        label_names,
    })
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a model in the text format:
/// a magic line, a `d r t` header, then the d rows of U and r rows of B,
/// each number at 17 significant digits so reloading is bitwise.
pub fn model_to_string(model: &MetricModel) -> String {
    let d = model.ambient_dim();
    let r = model.rank();
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC}");
    let _ = writeln!(out, "{d} {r} {}", fmt17(model.t));
    for i in 0..d {
        let row: Vec<String> = (0..r).map(|j| fmt17(model.u.matrix()[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    for i in 0..r {
        let row: Vec<String> = (0..r).map(|j| fmt17(model.b.matrix()[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn save_model(model: &MetricModel, path: &Path) -> Result<()> {
    write_file(path, &model_to_string(model))
}

fn model_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::ModelFormat {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn parse_numbers(path: &Path, line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let values: std::result::Result<Vec<f64>, _> =
        line.split_whitespace().map(str::parse::<f64>).collect();
    let values = values.map_err(|_| model_err(path, format!("line {line_no}: invalid number")))?;
    if values.len() != expected {
        return Err(model_err(
            path,
            format!(
                "line {line_no}: expected {expected} numbers, found {}",
                values.len()
            ),
        ));
    }
    Ok(values)
}

/// Loads a model file, re-validating the orthonormality of U and the
/// positive definiteness of B. The parsed entries are adopted verbatim, so
/// a save/load round trip reproduces the matrices bitwise.
pub fn load_model(path: &Path) -> Result<MetricModel> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, magic) = lines
        .next()
        .ok_or_else(|| model_err(path, "empty file"))?;
    if magic.trim() != MODEL_MAGIC {
        if magic.trim_start().starts_with("LRGMML") {
            return Err(model_err(
                path,
                format!("unsupported version '{}' (expected '{MODEL_MAGIC}')", magic.trim()),
            ));
        }
        return Err(model_err(path, "missing magic line; not a model file"));
    }

    let (_, header) = lines
        .next()
        .ok_or_else(|| model_err(path, "missing header line"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(model_err(path, "header must be 'd r t'"));
    }
    let d: usize = fields[0]
        .parse()
        .map_err(|_| model_err(path, "invalid dimension in header"))?;
    let r: usize = fields[1]
        .parse()
        .map_err(|_| model_err(path, "invalid rank in header"))?;
    let t: f64 = fields[2]
        .parse()
        .map_err(|_| model_err(path, "invalid t in header"))?;
    if d == 0 || r == 0 || r > d {
        return Err(model_err(path, format!("inconsistent dimensions d={d}, r={r}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(model_err(path, format!("t = {t} outside [0, 1]")));
    }

    let mut u = DMatrix::zeros(d, r);
    for i in 0..d {
        let (line_idx, line) = lines
            .next()
            .ok_or_else(|| model_err(path, format!("missing U row {i} (expected {d} rows)")))?;
        let values = parse_numbers(path, line_idx + 1, line, r)?;
        for (j, v) in values.into_iter().enumerate() {
            u[(i, j)] = v;
        }
    }
    let mut b = DMatrix::zeros(r, r);
    for i in 0..r {
        let (line_idx, line) = lines
            .next()
            .ok_or_else(|| model_err(path, format!("missing B row {i} (expected {r} rows)")))?;
        let values = parse_numbers(path, line_idx + 1, line, r)?;
        for (j, v) in values.into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    if let Some((line_idx, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(model_err(
            path,
            format!("unexpected trailing content at line {}: '{line}'", line_idx + 1),
        ));
    }

    let u = StiefelPoint::from_matrix(u)
        .map_err(|e| model_err(path, format!("basis check failed: {e}")))?;
    let b = SpdMatrix::adopt_validated(b, "stored metric factor B")
        .map_err(|e| model_err(path, format!("factor check failed: {e}")))?;
    Ok(MetricModel { u, b, t })
}

fn method_str(m: Method) -> &'static str {
    m.as_str()
}

/// Serializes result records. `include_timing` controls whether the
/// `seconds` column carries measured wall time; reproducible outputs (such
/// as sweep files meant to be byte-comparable across identical invocations)
/// write zeros instead.
pub fn results_to_csv(records: &[ResultRecord], include_timing: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let seconds = if include_timing { r.seconds } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.dataset,
            method_str(r.method),
            r.rank,
            r.t,
            r.run,
            r.error,
            seconds,
            r.iterations
        );
    }
    out
}

/// Parses a results CSV produced by [`results_to_csv`].
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "results file must start with '{RESULTS_HEADER}'"
            )))
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(Error::InvalidArgument(format!(
                "results line {}: expected 8 fields, found {}",
                idx + 2,
                cells.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| {
                Error::InvalidArgument(format!("results line {}: invalid {what} '{s}'", idx + 2))
            })
        };
        let parse_u = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::InvalidArgument(format!("results line {}: invalid {what} '{s}'", idx + 2))
            })
        };
        let error = parse_f(cells[5], "error")?;
        if !(0.0..=1.0).contains(&error) {
            return Err(Error::InvalidArgument(format!(
                "results line {}: error rate {error} outside [0, 1]",
                idx + 2
            )));
        }
        records.push(ResultRecord {
            dataset: cells[0].to_string(),
            method: Method::parse(cells[1])?,
            rank: parse_u(cells[2], "rank")?,
            t: parse_f(cells[3], "t")?,
            run: parse_u(cells[4], "run")?,
            error,
            seconds: parse_f(cells[6], "seconds")?,
            iterations: parse_u(cells[7], "iterations")?,
        });
    }
    Ok(records)
}

/// Aggregates records into plot data: mean and sample standard deviation of
/// the error per (method, rank), ordered by method name then rank.
pub fn plot_data_csv(records: &[ResultRecord]) -> String {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(&'static str, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((method_str(r.method), r.rank))
            .or_default()
            .push(r.error);
    }
    let mut out = String::from("method,rank,mean_error,stddev_error,runs\n");
    for ((method, rank), errors) in groups {
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(out, "{method},{rank},{mean},{std},{n}");
    }
    out
}
