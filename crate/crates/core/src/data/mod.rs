//! Tabular data: schema, encoding, splits, and synthetic generators.

mod blobs;
mod schema;
mod split;
mod table;

pub use blobs::{make_blobs, reference_blob_config, reference_blobs, BlobConfig, SyntheticTable};
pub use schema::{Feature, FeatureKind, LabelSpec, TabularSchema};
pub use split::{split_indices, SplitSpec};
pub use table::{read_csv, read_feature_csv, write_csv, RawTable, RawValue};

pub(crate) use schema::argmax;

use std::path::Path;

use ndarray::Axis;

use crate::classifiers::Classifier;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Encoded rows with ground-truth labels and, once relabelled, the
/// classifier's predicted labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y_true: Vec<usize>,
    pub y_pred: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(x: Matrix, y_true: Vec<usize>) -> Result<Self> {
        if x.nrows() != y_true.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                x.nrows(),
                y_true.len()
            )));
        }
        Ok(Self {
            x,
            y_true,
            y_pred: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).to_vec()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            y_true: indices.iter().map(|&i| self.y_true[i]).collect(),
            y_pred: self
                .y_pred
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// The labels downstream generative stages train on.
    pub fn predicted(&self) -> Result<&[usize]> {
        self.y_pred
            .as_deref()
            .ok_or_else(|| Error::Invalid("dataset has no classifier-predicted labels".into()))
    }

    /// Predicted labels when present, ground truth otherwise.
    pub fn labels(&self) -> &[usize] {
        self.y_pred.as_deref().unwrap_or(&self.y_true)
    }

    pub fn split(&self, spec: &SplitSpec) -> Result<Vec<Dataset>> {
        Ok(split_indices(self.len(), spec)?
            .iter()
            .map(|idx| self.subset(idx))
            .collect())
    }
}

/// Sets `y_pred = M(x)` for every row.
pub fn relabel_with_classifier(dataset: &Dataset, classifier: &dyn Classifier) -> Result<Dataset> {
    if classifier.input_width() != dataset.width() {
        return Err(Error::Shape(format!(
            "classifier expects width {}, dataset has {}",
            classifier.input_width(),
            dataset.width()
        )));
    }
    let mut out = dataset.clone();
    out.y_pred = Some(classifier.predict_batch(&dataset.x));
    Ok(out)
}

/// Reads a CSV file and encodes it. Normalization statistics are fitted on
/// this file when the schema has none yet, and reused otherwise.
pub fn load_csv(path: &Path, schema: &mut TabularSchema) -> Result<Dataset> {
    let table = read_csv(path, schema)?;
    if !schema.is_fitted() {
        schema.fit_normalization(&table)?;
    }
    schema.encode_table(&table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::FnClassifier;
    use std::io::Write;

    fn wine_like_schema(n: usize) -> TabularSchema {
        TabularSchema::new(
            (0..n).map(|i| Feature::continuous(format!("f{i}"))).collect(),
            LabelSpec {
                name: "quality".into(),
                classes: vec!["bad".into(), "good".into()],
            },
        )
        .unwrap()
    }

    #[test]
    fn eleven_continuous_features_encode_to_width_eleven() {
        assert_eq!(wine_like_schema(11).encoded_width(), 11);
    }

    #[test]
    fn load_csv_fits_min_max() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "f1,quality,f0").unwrap();
        writeln!(f, "1,bad,10").unwrap();
        writeln!(f, "3,good,20").unwrap();
        writeln!(f, "2,good,15").unwrap();
        drop(f);
        let mut schema = wine_like_schema(2);
        let d = load_csv(&path, &mut schema).unwrap();
        assert_eq!(schema.continuous_column("f0").unwrap().1, (10.0, 20.0));
        assert_eq!(d.x.column(0).to_vec(), vec![0.0, 1.0, 0.5]);
        assert_eq!(d.y_true, vec![0, 1, 1]);
        assert!(d.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn load_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "f0,quality\n1,bad\n").unwrap();
        let err = load_csv(&path, &mut wine_like_schema(2)).unwrap_err();
        assert!(err.to_string().contains("missing column \"f1\""), "{err}");

        std::fs::write(&path, "f0,f1,quality\n1,abc,bad\n").unwrap();
        let err = load_csv(&path, &mut wine_like_schema(2)).unwrap_err();
        assert!(err.to_string().contains("non-numeric"), "{err}");

        let mut schema = TabularSchema::new(
            vec![Feature::categorical("c", &["x", "y", "z"])],
            LabelSpec {
                name: "quality".into(),
                classes: vec!["bad".into(), "good".into()],
            },
        )
        .unwrap();
        std::fs::write(&path, "c,quality\nx,bad\nw,good\n").unwrap();
        let err = load_csv(&path, &mut schema).unwrap_err();
        assert!(err.to_string().contains("unseen level"), "{err}");

        std::fs::write(&path, "c,quality\nx,bad\nz,good\ny,bad\n").unwrap();
        let d = load_csv(&path, &mut schema).unwrap();
        assert_eq!(d.width(), 3);
        for row in d.x.rows() {
            assert_eq!(row.sum(), 1.0);
        }
    }

    #[test]
    fn relabel_constant_and_memorizer() {
        let x = Matrix::from_shape_fn((6, 2), |(r, c)| (r * 2 + c) as f64);
        let d = Dataset::new(x, vec![0, 1, 1, 0, 1, 0]).unwrap();
        let zero = FnClassifier::new(2, 2, |_| 0);
        assert_eq!(relabel_with_classifier(&d, &zero).unwrap().y_pred, Some(vec![0; 6]));

        let truth = d.y_true.clone();
        let memo = FnClassifier::new(2, 2, move |x: &[f64]| truth[(x[0] / 2.0) as usize]);
        let r = relabel_with_classifier(&d, &memo).unwrap();
        assert_eq!(r.y_pred.as_deref(), Some(&d.y_true[..]));

        let wide = FnClassifier::new(3, 2, |_| 0);
        assert!(relabel_with_classifier(&d, &wide).is_err());
    }
}
