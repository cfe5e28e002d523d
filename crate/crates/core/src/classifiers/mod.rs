//! Black-box classifiers: the prediction contract, an MLP, a random forest,
//! and retrain pools for robustness evaluation.

mod forest;
mod mlp;
mod pool;

pub use forest::{train_random_forest, ForestConfig, RandomForest, TreeNode};
pub use mlp::{train_mlp_classifier, MlpClassifier, MlpClassifierConfig};
pub use pool::{build_retrain_pool, RetrainPool};

use serde::{Deserialize, Serialize};

use crate::data::{argmax, Dataset};
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Prediction-only access to a trained classifier.
pub trait Classifier: Send + Sync {
    fn input_width(&self) -> usize;

    fn n_classes(&self) -> usize;

    /// Class probabilities, when the model provides them.
    fn predict_proba(&self, x: &[f64]) -> Option<Vec<f64>>;

    fn predict(&self, x: &[f64]) -> usize;

    fn predict_batch(&self, x: &Matrix) -> Vec<usize> {
        x.rows()
            .into_iter()
            .map(|r| self.predict(&r.to_vec()))
            .collect()
    }
}

/// Fraction of rows where `predict` matches `labels`.
pub fn accuracy(classifier: &dyn Classifier, x: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let pred = classifier.predict_batch(x);
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

/// Argmax with ties going to the lowest index.
pub(crate) fn vote(values: &[f64]) -> usize {
    argmax(values)
}

/// Hyperparameters for either classifier kind.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierConfig {
    Mlp(MlpClassifierConfig),
    Forest(ForestConfig),
}

impl ClassifierConfig {
    pub fn fit(&self, x: &Matrix, labels: &[usize], n_classes: usize) -> Result<AnyClassifier> {
        Ok(match self {
            ClassifierConfig::Mlp(c) => AnyClassifier::Mlp(MlpClassifier::fit(x, labels, n_classes, c)?),
            ClassifierConfig::Forest(c) => {
                AnyClassifier::Forest(RandomForest::fit(x, labels, n_classes, c)?)
            }
        })
    }

    /// Trains on ground-truth labels.
    pub fn train(&self, train: &Dataset, n_classes: usize) -> Result<AnyClassifier> {
        self.fit(&train.x, &train.y_true, n_classes)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierConfig::Mlp(_) => "mlp",
            ClassifierConfig::Forest(_) => "forest",
        }
    }
}

/// A persisted classifier of either kind.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyClassifier {
    Mlp(MlpClassifier),
    Forest(RandomForest),
}

impl AnyClassifier {
    fn inner(&self) -> &dyn Classifier {
        match self {
            AnyClassifier::Mlp(m) => m,
            AnyClassifier::Forest(f) => f,
        }
    }
}

impl Classifier for AnyClassifier {
    fn input_width(&self) -> usize {
        self.inner().input_width()
    }

    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn predict_proba(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner().predict_proba(x)
    }

    fn predict(&self, x: &[f64]) -> usize {
        self.inner().predict(x)
    }

    fn predict_batch(&self, x: &Matrix) -> Vec<usize> {
        self.inner().predict_batch(x)
    }
}

/// Wraps a closure as a classifier without probabilities.
pub struct FnClassifier<F> {
    width: usize,
    n_classes: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> usize + Send + Sync> FnClassifier<F> {
    pub fn new(width: usize, n_classes: usize, f: F) -> Self {
        Self { width, n_classes, f }
    }
}

impl<F: Fn(&[f64]) -> usize + Send + Sync> Classifier for FnClassifier<F> {
    fn input_width(&self) -> usize {
        self.width
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, _: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn predict(&self, x: &[f64]) -> usize {
        (self.f)(x)
    }
}

pub(crate) fn check_training_set(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Invalid("empty training set".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Invalid(format!("label {bad} outside {n_classes} classes")));
    }
    Ok(())
}
