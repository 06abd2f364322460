//! On-disk formats: model JSON and dataset CSV.
//!
//! Model file:
//!
//! ```json
//! {"version": 1, "d": 2, "C": 3, "lambda": 1.0, "epsilon": 0.5,
//!  "scale_factor": 0.25, "matrices": [[...row-major (d+1)^2 floats...], ...]}
//! ```
//!
//! `epsilon` is `null` for models trained without privacy. Floats are written in
//! shortest round-trip form, so reading a written model gives back identical bits.
//!
//! Dataset CSV: one instance per row, `d` feature columns followed by an integer label
//! in `1..=C`. A header row is detected when its first line does not parse as numbers.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::ClassParams;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub d: usize,
    #[serde(rename = "C")]
    pub classes: usize,
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub scale_factor: f64,
    pub matrices: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_params(params: &ClassParams, lambda: f64, epsilon: Option<f64>, scale_factor: f64) -> Self {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            d: params.feature_dim(),
            classes: params.num_classes(),
            lambda,
            epsilon,
            scale_factor,
            matrices: params.as_slice().iter().map(|m| m.as_slice().to_vec()).collect(),
        }
    }

    /// Validates the header against the matrices and rebuilds the classifier.
    pub fn to_params(&self) -> Result<ClassParams> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported model version {}", self.version)));
        }
        if self.matrices.len() != self.classes {
            return Err(Error::InvalidData(format!(
                "model declares {} classes but stores {} matrices",
                self.classes,
                self.matrices.len()
            )));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(Error::InvalidData("scale_factor must be positive".into()));
        }
        let dim = self.d + 1;
        let matrices =
            self.matrices.iter().map(|m| SymMatrix::from_row_major(dim, m.clone())).collect::<Result<Vec<_>>>()?;
        ClassParams::new(matrices)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Labeled rows as read from CSV, before normalization. Labels are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLabeled {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Largest label seen (labels are `1..=C` in the file).
    pub num_classes: usize,
}

fn reader_builder(delimiter: u8) -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.has_headers(false).delimiter(delimiter).trim(csv::Trim::All).flexible(true);
    b
}

fn parse_records<R: Read>(reader: R, delimiter: u8) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = reader_builder(delimiter).from_reader(reader);
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((i + 1, rec.iter().map(str::to_owned).collect()));
    }
    // Header: a first row with any non-numeric field.
    if let Some((_, first)) = rows.first() {
        if first.iter().any(|f| f.parse::<f64>().is_err()) {
            rows.remove(0);
        }
    }
    Ok(rows)
}

fn parse_float(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::InvalidData(format!("line {line}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::InvalidData(format!("line {line}: non-finite feature '{field}'")));
    }
    Ok(v)
}

/// Reads `features..., label` rows.
pub fn read_labeled_csv<R: Read>(reader: R, delimiter: u8) -> Result<RawLabeled> {
    let rows = parse_records(reader, delimiter)?;
    let mut width = None;
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        if fields.len() < 2 {
            return Err(Error::InvalidData(format!("line {line}: need at least one feature and a label")));
        }
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(Error::InvalidData(format!("line {line}: expected {w} columns, found {}", fields.len())));
        }
        let (label_field, feature_fields) = fields.split_last().expect("non-empty");
        let label: usize = label_field
            .parse()
            .ok()
            .filter(|&l| l >= 1)
            .ok_or_else(|| Error::InvalidData(format!("line {line}: label '{label_field}' is not in 1..=C")))?;
        features.push(feature_fields.iter().map(|f| parse_float(f, line)).collect::<Result<Vec<_>>>()?);
        labels.push(label - 1);
    }
    if features.is_empty() {
        return Err(Error::InvalidData("dataset has no rows".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(RawLabeled { features, labels, num_classes })
}

pub fn read_labeled_csv_path(path: &Path, delimiter: u8) -> Result<RawLabeled> {
    read_labeled_csv(File::open(path)?, delimiter)
}

/// Reads feature-only rows, each of exactly `dim` columns. An empty input gives no rows.
pub fn read_features_csv<R: Read>(reader: R, delimiter: u8, dim: usize) -> Result<Vec<Vec<f64>>> {
    let rows = parse_records(reader, delimiter)?;
    rows.into_iter()
        .map(|(line, fields)| {
            if fields.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: fields.len() });
            }
            fields.iter().map(|f| parse_float(f, line)).collect()
        })
        .collect()
}

/// One 1-based label per line.
pub fn write_predictions<W: Write>(mut writer: W, labels: &[usize]) -> Result<()> {
    for l in labels {
        writeln!(writer, "{}", l + 1)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes rows as CSV with a trailing 1-based label column.
pub fn write_labeled_csv<W: Write>(writer: W, features: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (x, y) in features.iter().zip(labels) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push((y + 1).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
