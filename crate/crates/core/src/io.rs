//! File formats: CSV for tables, JSON for models, JSON lines for logs.
//!
//! Matrix and table CSVs always carry a header row.

use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::iohmm::{Sequence, TrainingDataset};
use crate::pomdp::CostTable;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

fn format_err<T>(msg: impl Into<String>) -> Result<T, IoError> {
    Err(IoError::Format(msg.into()))
}

pub fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })
}

pub fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<f64, IoError> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| IoError::Format(format!("row {row}, column {col:?}: {t:?} is not a number")))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// A numeric CSV: header labels plus rows of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read_table<R: Read>(r: R) -> Result<Table, IoError> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return format_err("missing header row");
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return format_err(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                rec.len(),
                header.len()
            ));
        }
        rows.push(
            rec.iter()
                .zip(&header)
                .map(|(v, h)| parse_cell(v, i + 1, h))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(Table { header, rows })
}

/// Square or rectangular probability matrix; NaN cells are rejected.
pub fn read_matrix<R: Read>(r: R) -> Result<Vec<Vec<f64>>, IoError> {
    let t = read_table(r)?;
    if t.rows.is_empty() {
        return format_err("matrix has no rows");
    }
    if t.rows.iter().flatten().any(|v| !v.is_finite()) {
        return format_err("matrix has missing or non-finite entries");
    }
    Ok(t.rows)
}

pub fn write_matrix<W: Write>(w: W, header: &[String], rows: &[Vec<f64>]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(r.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Cost CSV: `action,<state labels...>`, one row per action including `PM`.
pub fn read_cost_table<R: Read>(r: R) -> Result<CostTable, IoError> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return format_err("cost table needs an action column and at least one state column");
    }
    let mut actions = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return format_err(format!(
                "cost row {} has {} fields, header has {}",
                i + 1,
                rec.len(),
                header.len()
            ));
        }
        actions.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .zip(&header[1..])
            .map(|(v, h)| parse_cell(v, i + 1, h))
            .collect::<Result<Vec<_>, _>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return format_err(format!("cost row {} has missing entries", i + 1));
        }
        values.push(row);
    }
    if actions.is_empty() {
        return format_err("cost table has no rows");
    }
    Ok(CostTable {
        actions,
        states: header[1..].to_vec(),
        values,
    })
}

pub fn read_features<R: Read>(r: R) -> Result<Vec<FeatureVector>, IoError> {
    let t = read_table(r)?;
    if t.header != FEATURE_NAMES {
        return format_err(format!(
            "feature header must be {}",
            FEATURE_NAMES.join(",")
        ));
    }
    t.rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.iter().any(|v| !v.is_finite()) {
                return format_err(format!("feature row {} has missing values", i + 1));
            }
            let arr: [f64; 11] = row.try_into().expect("width checked against header");
            Ok(FeatureVector::from_array(arr))
        })
        .collect()
}

pub fn write_features<W: Write>(w: W, features: &[FeatureVector]) -> Result<(), IoError> {
    let header: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
    write_matrix(w, &header, &rows)
}

/// Raw samples: a single column, or `epoch,value` with contiguous epochs.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Stream(Vec<f64>),
    Epochs(Vec<Vec<f64>>),
}

pub fn read_samples<R: Read>(r: R) -> Result<Samples, IoError> {
    let t = read_table(r)?;
    if t.rows.is_empty() {
        return format_err("sample file has no rows");
    }
    if t.rows.iter().flatten().any(|v| !v.is_finite()) {
        return format_err("sample file has missing or non-finite values");
    }
    match t.header.len() {
        1 => Ok(Samples::Stream(t.rows.into_iter().map(|r| r[0]).collect())),
        2 if t.header[0] == "epoch" => {
            let mut epochs: Vec<Vec<f64>> = Vec::new();
            let mut seen: Vec<f64> = Vec::new();
            for row in t.rows {
                if seen.last() != Some(&row[0]) {
                    if seen.contains(&row[0]) {
                        return format_err(format!("epoch {} is not contiguous", row[0]));
                    }
                    seen.push(row[0]);
                    epochs.push(Vec::new());
                }
                epochs.last_mut().expect("pushed above").push(row[1]);
            }
            Ok(Samples::Epochs(epochs))
        }
        _ => format_err("sample file must have one column, or two columns named epoch,value"),
    }
}

/// Training table `unit,action,<features...>[,failure]` parsed into sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTable {
    pub dataset: TrainingDataset,
    pub actions: Vec<String>,
    pub feature_names: Vec<String>,
    pub units: Vec<String>,
}

/// Reads a training table. Action labels map onto `known_actions` when
/// given, otherwise onto their order of first appearance. A unit's sequence
/// is flagged as run-to-failure when its last row has a non-zero `failure`.
pub fn read_training<R: Read>(
    r: R,
    known_actions: Option<&[String]>,
) -> Result<TrainingTable, IoError> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "unit" || header[1] != "action" {
        return format_err(
            "training header must start with unit,action followed by feature columns",
        );
    }
    let has_failure = header.last().is_some_and(|h| h == "failure");
    let feat_end = if has_failure {
        header.len() - 1
    } else {
        header.len()
    };
    if feat_end <= 2 {
        return format_err("training table has no feature columns");
    }
    let feature_names = header[2..feat_end].to_vec();

    let mut actions: Vec<String> = known_actions.map(<[String]>::to_vec).unwrap_or_default();
    let mut units: Vec<String> = Vec::new();
    let mut seqs: Vec<(Sequence, bool)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        if rec.len() != header.len() {
            return format_err(format!(
                "row {line} has {} fields, header has {}",
                rec.len(),
                header.len()
            ));
        }
        let unit = rec[0].to_string();
        let label = rec[1].to_string();
        let a = match actions.iter().position(|x| *x == label) {
            Some(a) => a,
            None if known_actions.is_none() => {
                actions.push(label);
                actions.len() - 1
            }
            None => return format_err(format!("row {line}: unknown action {label:?}")),
        };
        let obs = (2..feat_end)
            .map(|c| parse_cell(&rec[c], line, &header[c]))
            .collect::<Result<Vec<_>, _>>()?;
        if obs.iter().any(|v| !v.is_finite()) {
            return format_err(format!("row {line} has missing feature values"));
        }
        let failed = if has_failure {
            parse_cell(&rec[feat_end], line, "failure")? != 0.0
        } else {
            false
        };
        let idx = match units.iter().position(|u| *u == unit) {
            Some(j) if j + 1 == units.len() => j,
            Some(_) => {
                return format_err(format!(
                    "row {line}: rows of unit {unit:?} are not contiguous"
                ))
            }
            None => {
                units.push(unit);
                seqs.push((Sequence::new(Vec::new(), Vec::new()), false));
                units.len() - 1
            }
        };
        let (s, last_failed) = &mut seqs[idx];
        s.observations.push(obs);
        s.actions.push(a);
        *last_failed = failed;
    }
    if seqs.is_empty() {
        return format_err("training table has no rows");
    }
    let sequences = seqs
        .into_iter()
        .map(|(mut s, f)| {
            s.failed = f;
            s
        })
        .collect();
    Ok(TrainingTable {
        dataset: TrainingDataset::new(sequences),
        actions,
        feature_names,
        units,
    })
}

/// Columns kept by the sensor screening rules: a column is dropped when it
/// holds a single distinct value, when half or more of its entries are
/// missing, or when its standard deviation is below `min_std`.
pub fn informative_columns(rows: &[Vec<f64>], min_std: f64) -> Vec<usize> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .filter(|&c| {
            let vals: Vec<f64> = rows
                .iter()
                .map(|r| r[c])
                .filter(|v| v.is_finite())
                .collect();
            let missing = rows.len() - vals.len();
            if 2 * missing >= rows.len() || vals.is_empty() {
                return false;
            }
            if vals.iter().all(|&v| v == vals[0]) {
                return false;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            var.sqrt() >= min_std
        })
        .collect()
}

/// Remaining-life labels for a run-to-failure unit observed over `cycles` epochs.
pub fn rul_labels(cycles: usize) -> Vec<usize> {
    (0..cycles).rev().collect()
}

/// Writes one JSON document per line.
pub fn write_json_lines<W: Write, T: Serialize>(mut w: W, rows: &[T]) -> Result<(), IoError> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes serialisable records as CSV with a header derived from field names.
pub fn write_records<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
