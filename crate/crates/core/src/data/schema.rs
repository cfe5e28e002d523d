use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::table::{RawTable, RawValue};
use super::Dataset;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    /// `range` holds the min-max normalization statistics once fitted.
    Continuous {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<(f64, f64)>,
    },
    Categorical { levels: Vec<String> },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Feature {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl Feature {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous { range: None },
        }
    }

    pub fn categorical(name: impl Into<String>, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    fn width(&self) -> usize {
        match &self.kind {
            FeatureKind::Continuous { .. } => 1,
            FeatureKind::Categorical { levels } => levels.len(),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LabelSpec {
    pub name: String,
    pub classes: Vec<String>,
}

/// Feature metadata plus normalization statistics.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TabularSchema {
    pub features: Vec<Feature>,
    pub label: LabelSpec,
}

impl TabularSchema {
    pub fn new(features: Vec<Feature>, label: LabelSpec) -> Result<Self> {
        let schema = Self { features, label };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("no features".into()));
        }
        if self.label.classes.len() < 2 {
            return Err(Error::Schema("label needs at least two classes".into()));
        }
        let mut names: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        names.push(&self.label.name);
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Schema(format!("duplicate column name {:?}", w[0])));
        }
        for f in &self.features {
            match &f.kind {
                FeatureKind::Categorical { levels } if levels.len() < 2 => {
                    return Err(Error::Schema(format!(
                        "categorical feature {:?} needs at least two levels",
                        f.name
                    )))
                }
                FeatureKind::Continuous { range: Some((lo, hi)) } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                    return Err(Error::Schema(format!("bad range for {:?}", f.name)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn n_classes(&self) -> usize {
        self.label.classes.len()
    }

    pub fn encoded_width(&self) -> usize {
        self.features.iter().map(Feature::width).sum()
    }

    /// Encoded column span of every feature, in feature order.
    pub fn spans(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.features
            .iter()
            .map(|f| {
                let span = start..start + f.width();
                start = span.end;
                span
            })
            .collect()
    }

    /// Column spans of the one-hot groups.
    pub fn ohe_groups(&self) -> Vec<Range<usize>> {
        self.features
            .iter()
            .zip(self.spans())
            .filter(|(f, _)| matches!(f.kind, FeatureKind::Categorical { .. }))
            .map(|(_, s)| s)
            .collect()
    }

    /// Per encoded column: true for one-hot columns.
    pub fn categorical_columns(&self) -> Vec<bool> {
        let mut flags = vec![false; self.encoded_width()];
        for g in self.ohe_groups() {
            flags[g].iter_mut().for_each(|f| *f = true);
        }
        flags
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown feature {name:?}")))
    }

    /// Encoded column and normalization range of a continuous feature.
    pub fn continuous_column(&self, name: &str) -> Result<(usize, (f64, f64))> {
        let idx = self.feature_index(name)?;
        match &self.features[idx].kind {
            FeatureKind::Continuous { range: Some(r) } => Ok((self.spans()[idx].start, *r)),
            FeatureKind::Continuous { range: None } => Err(Error::Schema(format!(
                "feature {name:?} has no normalization statistics"
            ))),
            FeatureKind::Categorical { .. } => Err(Error::Schema(format!(
                "feature {name:?} is categorical"
            ))),
        }
    }

    pub fn label_index(&self, class: &str) -> Result<usize> {
        self.label
            .classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::Schema(format!("unknown class {class:?}")))
    }

    pub fn is_fitted(&self) -> bool {
        self.features
            .iter()
            .all(|f| !matches!(f.kind, FeatureKind::Continuous { range: None }))
    }

    /// Records per-feature min and max of `table` as normalization statistics.
    pub fn fit_normalization(&mut self, table: &RawTable) -> Result<()> {
        if table.is_empty() {
            return Err(Error::Invalid("cannot fit normalization on an empty table".into()));
        }
        for (i, f) in self.features.iter_mut().enumerate() {
            if let FeatureKind::Continuous { range } = &mut f.kind {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for row in &table.rows {
                    let v = row[i].as_number().ok_or_else(|| {
                        Error::Schema(format!("non-numeric value for {:?}", f.name))
                    })?;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                *range = Some((lo, hi));
            }
        }
        Ok(())
    }

    pub fn encode_row(&self, row: &[RawValue]) -> Result<Vec<f64>> {
        if row.len() != self.features.len() {
            return Err(Error::Schema(format!(
                "row has {} values, schema has {} features",
                row.len(),
                self.features.len()
            )));
        }
        let mut out = Vec::with_capacity(self.encoded_width());
        for (f, v) in self.features.iter().zip(row) {
            match &f.kind {
                FeatureKind::Continuous { range } => {
                    let (lo, hi) = range.ok_or_else(|| {
                        Error::Schema(format!("feature {:?} is not fitted", f.name))
                    })?;
                    let x = v.as_number().ok_or_else(|| {
                        Error::Schema(format!("non-numeric value {v:?} for {:?}", f.name))
                    })?;
                    out.push(normalize(x, lo, hi));
                }
                FeatureKind::Categorical { levels } => {
                    let level = level_of(v);
                    let k = levels.iter().position(|l| *l == level).ok_or_else(|| {
                        Error::Schema(format!("unseen level {level:?} for {:?}", f.name))
                    })?;
                    out.extend((0..levels.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`TabularSchema::encode_row`]; one-hot groups decode to
    /// their argmax level.
    pub fn decode_row(&self, encoded: &[f64]) -> Result<Vec<RawValue>> {
        if encoded.len() != self.encoded_width() {
            return Err(Error::Schema(format!(
                "encoded row has width {}, schema expects {}",
                encoded.len(),
                self.encoded_width()
            )));
        }
        self.features
            .iter()
            .zip(self.spans())
            .map(|(f, span)| match &f.kind {
                FeatureKind::Continuous { range } => {
                    let (lo, hi) = range.ok_or_else(|| {
                        Error::Schema(format!("feature {:?} is not fitted", f.name))
                    })?;
                    Ok(RawValue::Number(denormalize(encoded[span.start], lo, hi)))
                }
                FeatureKind::Categorical { levels } => {
                    let k = argmax(&encoded[span]);
                    Ok(RawValue::Level(levels[k].clone()))
                }
            })
            .collect()
    }

    pub fn encode_table(&self, table: &RawTable) -> Result<Dataset> {
        let width = self.encoded_width();
        let mut data = Vec::with_capacity(table.len() * width);
        for row in &table.rows {
            data.extend(self.encode_row(row)?);
        }
        if let Some(&bad) = table.labels.iter().find(|&&y| y >= self.n_classes()) {
            return Err(Error::Schema(format!("label index {bad} out of range")));
        }
        let x = Matrix::from_shape_vec((table.len(), width), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Dataset::new(x, table.labels.clone())
    }
}

fn normalize(x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width > 0.0 {
        (x - lo) / width
    } else {
        x - lo
    }
}

fn denormalize(x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width > 0.0 {
        lo + x * width
    } else {
        lo + x
    }
}

fn level_of(v: &RawValue) -> String {
    match v {
        RawValue::Level(s) => s.clone(),
        RawValue::Number(x) => x.to_string(),
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
