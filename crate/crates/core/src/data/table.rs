use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, TabularSchema};
use crate::error::{Error, Result};

/// A feature value in raw (un-encoded) units.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Level(String),
}

impl RawValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            RawValue::Number(x) => Some(*x),
            RawValue::Level(_) => None,
        }
    }
}

impl std::fmt::Display for RawValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RawValue::Number(x) => write!(f, "{x}"),
            RawValue::Level(s) => f.write_str(s),
        }
    }
}

/// Rows in raw units with class indices, in schema feature order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawTable {
    pub rows: Vec<Vec<RawValue>>,
    pub labels: Vec<usize>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> RawTable {
        RawTable {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Reads a headered, comma-separated file. Columns are matched by name, so
/// their order in the file is free; extra columns are ignored.
pub fn read_csv(path: &Path, schema: &TabularSchema) -> Result<RawTable> {
    read_rows(path, schema, true)
}

/// As [`read_csv`], without requiring a label column. Labels are left empty.
pub fn read_feature_csv(path: &Path, schema: &TabularSchema) -> Result<RawTable> {
    read_rows(path, schema, false)
}

fn read_rows(path: &Path, schema: &TabularSchema, labelled: bool) -> Result<RawTable> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => csv_err(e.to_string()),
    })?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| csv_err(format!("missing column {name:?}")))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let label_col = if labelled { Some(column(&schema.label.name)?) } else { None };

    let mut table = RawTable::default();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let row_no = line + 2;
        let mut row = Vec::with_capacity(feature_cols.len());
        for (f, &c) in schema.features.iter().zip(&feature_cols) {
            let cell = record.get(c).unwrap_or("").trim();
            row.push(match &f.kind {
                FeatureKind::Continuous { .. } => RawValue::Number(cell.parse().map_err(|_| {
                    csv_err(format!("row {row_no}: non-numeric value {cell:?} for {:?}", f.name))
                })?),
                FeatureKind::Categorical { levels } => {
                    if !levels.iter().any(|l| l == cell) {
                        return Err(csv_err(format!(
                            "row {row_no}: unseen level {cell:?} for {:?}",
                            f.name
                        )));
                    }
                    RawValue::Level(cell.to_string())
                }
            });
        }
        if let Some(c) = label_col {
            let label = record.get(c).unwrap_or("").trim();
            let y = schema
                .label_index(label)
                .map_err(|_| csv_err(format!("row {row_no}: unknown class {label:?}")))?;
            table.labels.push(y);
        }
        table.rows.push(row);
    }
    Ok(table)
}

pub fn write_csv(path: &Path, schema: &TabularSchema, table: &RawTable) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    header.push(&schema.label.name);
    w.write_record(&header).map_err(csv_err)?;
    for (row, &y) in table.rows.iter().zip(&table.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(schema.label.classes[y].clone());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
