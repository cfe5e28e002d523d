//! Counterfactual quality metrics: validity, proximity, plausibility (LOF),
//! diversity, robustness to model and input changes, actionability,
//! synthetic-data utility, and centroid accuracy.

mod distance;
mod harness;
mod lof;

pub use distance::{diversity, l1, max_set_distance};
pub use harness::{
    evaluate, synthetic_constraints, EvaluationConfig, MetricsReport, RepeatMetrics, Summary, VariantMetrics,
};
pub use lof::{LofIndex, DEFAULT_K, REACH_FLOOR};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{accuracy, Classifier, ClassifierConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lapace::CompiledConstraints;
use crate::lgmvae::{check_centroids, LgmvaeModel};

fn check_sets(ce_sets: &[Vec<Vec<f64>>], n: usize) -> Result<()> {
    if ce_sets.is_empty() {
        return Err(Error::Invalid("no test points".into()));
    }
    if ce_sets.len() != n {
        return Err(Error::Shape(format!("{} CE sets for {n} test points", ce_sets.len())));
    }
    Ok(())
}

/// Fraction of test points with at least one CE the classifier labels as
/// that point's target.
pub fn validity(ce_sets: &[Vec<Vec<f64>>], targets: &[usize], classifier: &dyn Classifier) -> Result<f64> {
    check_sets(ce_sets, targets.len())?;
    let hits = ce_sets
        .iter()
        .zip(targets)
        .filter(|(set, &t)| set.iter().any(|ce| classifier.predict(ce) == t))
        .count();
    Ok(hits as f64 / ce_sets.len() as f64)
}

/// Mean over test points of the mean L1 distance to their CEs.
pub fn proximity_l1(inputs: &[Vec<f64>], ce_sets: &[Vec<Vec<f64>>]) -> Result<f64> {
    check_sets(ce_sets, inputs.len())?;
    let mut total = 0.0;
    for (x, set) in inputs.iter().zip(ce_sets) {
        if set.is_empty() {
            return Err(Error::Invalid("test point without CEs".into()));
        }
        if set.iter().any(|ce| ce.len() != x.len()) {
            return Err(Error::Shape("CE width differs from its input".into()));
        }
        total += set.iter().map(|ce| l1(x, ce)).sum::<f64>() / set.len() as f64;
    }
    Ok(total / inputs.len() as f64)
}

/// Mean over CEs and pool members of agreement with the CE's target.
pub fn model_robustness<'a>(
    ces: &[Vec<f64>],
    targets: &[usize],
    pool: impl IntoIterator<Item = &'a dyn Classifier>,
) -> Result<f64> {
    if ces.len() != targets.len() {
        return Err(Error::Shape(format!("{} CEs for {} targets", ces.len(), targets.len())));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for member in pool {
        for (ce, &t) in ces.iter().zip(targets) {
            hits += usize::from(member.predict(ce) == t);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Invalid("model robustness needs CEs and a non-empty pool".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct InputRobustness {
    /// Mean set distance over the perturbations kept; `None` if all were
    /// excluded.
    pub mean: Option<f64>,
    pub kept: usize,
    /// Perturbations that changed the input's own predicted label.
    pub excluded: usize,
}

/// Uniform perturbations within an L-infinity ball, applied to the columns
/// flagged in `mask` only.
pub fn perturbations(x: &[f64], mask: &[bool], n: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            x.iter()
                .zip(mask)
                .map(|(&v, &m)| if m && radius > 0.0 { v + rng.random_range(-radius..=radius) } else { v })
                .collect()
        })
        .collect()
}

/// Regenerates CEs for each perturbed copy of `x` and averages the set
/// distance to `original`. Copies whose predicted label differs from
/// `label` are excluded.
pub fn input_robustness<F>(
    classifier: &dyn Classifier,
    label: usize,
    original: &[Vec<f64>],
    perturbed: &[Vec<f64>],
    mut generate: F,
) -> Result<InputRobustness>
where
    F: FnMut(&[f64]) -> Result<Vec<Vec<f64>>>,
{
    let mut total = 0.0;
    let mut kept = 0;
    let mut excluded = 0;
    for p in perturbed {
        if classifier.predict(p) != label {
            excluded += 1;
            continue;
        }
        total += max_set_distance(original, &generate(p)?)?;
        kept += 1;
    }
    Ok(InputRobustness {
        mean: (kept > 0).then(|| total / kept as f64),
        kept,
        excluded,
    })
}

/// One input's candidate CEs, its constraints, and its target.
pub struct ActionabilityCase<'a> {
    pub candidates: Vec<Vec<f64>>,
    pub constraints: &'a CompiledConstraints,
    pub target: usize,
}

/// Fraction of inputs with at least one candidate that is valid and meets
/// every constraint.
pub fn actionability_rate(cases: &[ActionabilityCase<'_>], classifier: &dyn Classifier) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Invalid("no test points".into()));
    }
    let hits = cases
        .iter()
        .filter(|c| {
            c.candidates
                .iter()
                .any(|x| c.constraints.satisfied(x) && classifier.predict(x) == c.target)
        })
        .count();
    Ok(hits as f64 / cases.len() as f64)
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct TstrResult {
    pub real_accuracy: f64,
    pub synthetic_accuracy: f64,
}

impl TstrResult {
    /// `real - synthetic`, in accuracy units.
    pub fn gap(&self) -> f64 {
        self.real_accuracy - self.synthetic_accuracy
    }
}

/// Trains one classifier on `real_train` and one on `synthetic` (both on
/// `y_true`), and scores both on `test`.
pub fn tstr_compare(
    real_train: &Dataset,
    synthetic: &Dataset,
    test: &Dataset,
    trainer: &ClassifierConfig,
    n_classes: usize,
) -> Result<TstrResult> {
    let real = trainer.train(real_train, n_classes)?;
    let synth = trainer.train(synthetic, n_classes)?;
    Ok(TstrResult {
        real_accuracy: accuracy(&real, &test.x, &test.y_true),
        synthetic_accuracy: accuracy(&synth, &test.x, &test.y_true),
    })
}

/// Samples a synthetic set the size of `real_train` whose label counts
/// match `real_train`'s predicted labels, then runs [`tstr_compare`].
pub fn tstr_utility(
    model: &LgmvaeModel,
    real_train: &Dataset,
    test: &Dataset,
    trainer: &ClassifierConfig,
    seed: u64,
) -> Result<TstrResult> {
    let predicted = real_train.predicted()?;
    let n_classes = model.n_labels();
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for y in 0..n_classes {
        let count = predicted.iter().filter(|&&p| p == y).count();
        if count == 0 {
            continue;
        }
        let s = model.sample(y, count, seed.wrapping_add(y as u64))?;
        xs.push(s.x);
        labels.extend(std::iter::repeat_n(y, count));
    }
    let views: Vec<_> = xs.iter().map(|m| m.view()).collect();
    let x = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let synthetic = Dataset::new(x, labels)?;
    tstr_compare(real_train, &synthetic, test, trainer, n_classes)
}

/// Fraction of clusters whose decoded centroid gets its own label.
pub fn centroid_accuracy(model: &LgmvaeModel, classifier: &dyn Classifier) -> Result<f64> {
    Ok(check_centroids(model, classifier)?.accuracy())
}
