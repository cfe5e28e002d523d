use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::constraints::{CompiledConstraints, ConstraintSet, SATISFIED_TOLERANCE};
use super::grid::TauGrid;
use crate::classifiers::Classifier;
use crate::diffmath::{Graph, Matrix};
use crate::error::{Error, Result};
use crate::lgmvae::{DecodeMode, LgmvaeModel};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PathEntry {
    pub tau: f64,
    pub latent: Vec<f64>,
    /// Inference-mode decode, in encoded units.
    pub decoded: Vec<f64>,
    pub label: usize,
    /// Correction steps applied to the latent before decoding.
    pub corrections: usize,
    /// Whether the decoded point meets every constraint (always true
    /// without constraints).
    pub satisfied: bool,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LatentPath {
    pub cluster: usize,
    pub entries: Vec<PathEntry>,
    /// Set when the final entry is not classified as the target.
    pub flagged: bool,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SelectedPoint {
    pub tau: f64,
    pub latent: Vec<f64>,
    pub decoded: Vec<f64>,
    pub label: usize,
}

/// First, Middle and Last counterfactuals of one path.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CeSelection {
    pub cluster: usize,
    pub first: SelectedPoint,
    /// Decode of the latent midpoint between First and Last; its `tau` is
    /// the midpoint of theirs.
    pub middle: SelectedPoint,
    pub last: SelectedPoint,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    First,
    Middle,
    Last,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::First, Variant::Middle, Variant::Last];

    pub fn name(self) -> &'static str {
        match self {
            Variant::First => "first",
            Variant::Middle => "middle",
            Variant::Last => "last",
        }
    }
}

impl CeSelection {
    pub fn get(&self, v: Variant) -> &SelectedPoint {
        match v {
            Variant::First => &self.first,
            Variant::Middle => &self.middle,
            Variant::Last => &self.last,
        }
    }
}

/// `(1 - tau) * from + tau * to`.
pub fn interpolate(from: &[f64], to: &[f64], tau: f64) -> Vec<f64> {
    from.iter().zip(to).map(|(a, b)| (1.0 - tau) * a + tau * b).collect()
}

fn check_request(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    x: &[f64],
    label: usize,
    target: usize,
) -> Result<()> {
    if !model.recourse_ready {
        return Err(Error::NotRecourseReady("centroids have not been validated against the classifier".into()));
    }
    if x.len() != model.input_width() || classifier.input_width() != model.input_width() {
        return Err(Error::Shape(format!(
            "input width {}, model {}, classifier {}",
            x.len(),
            model.input_width(),
            classifier.input_width()
        )));
    }
    if target >= model.n_labels() {
        return Err(Error::Invalid(format!("target {target} outside {} labels", model.n_labels())));
    }
    let predicted = classifier.predict(x);
    if predicted != label {
        return Err(Error::Invalid(format!("input is classified as {predicted}, not {label}")));
    }
    if target == label {
        return Err(Error::Infeasible(format!("input already has label {target}")));
    }
    Ok(())
}

/// Pushes `z` downhill on the aggregate constraint violation of its
/// pre-rounding decode. Steps that would increase the violation are
/// rejected and the step size halved. Returns the corrected latent, the
/// number of iterations, and the final violation.
pub fn correct_latent(
    model: &LgmvaeModel,
    z: &[f64],
    constraints: &CompiledConstraints,
    learning_rate: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let eval = |z: &[f64]| -> Result<f64> {
        let out = model.decode(z, DecodeMode::Training)?;
        Ok(constraints.violation(&out))
    };
    let mut z = z.to_vec();
    let mut current = eval(&z)?;
    let mut lr = learning_rate;
    let mut iterations = 0;
    while current > SATISFIED_TOLERANCE && iterations < max_iterations {
        let mut g = Graph::new();
        let zv = g.param(Matrix::from_shape_vec((1, z.len()), z.clone()).expect("row"));
        let decoded = model.decode_graph(&mut g, zv)?;
        let violation = constraints.graph_violation(&mut g, decoded)?;
        let grad = g.backward(violation)?.wrt(zv);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraint gradient".into()));
        }
        iterations += 1;
        let candidate: Vec<f64> = z.iter().zip(grad.iter()).map(|(a, d)| a - lr * d).collect();
        let value = eval(&candidate)?;
        if value <= current {
            z = candidate;
            current = value;
        } else {
            lr *= 0.5;
        }
    }
    Ok((z, iterations, current))
}

fn build_paths(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    z_x: &[f64],
    target: usize,
    grid: &TauGrid,
    constraints: Option<(&ConstraintSet, &CompiledConstraints)>,
) -> Result<Vec<LatentPath>> {
    let centroids = model.centroids(target)?;
    let mut paths = Vec::with_capacity(centroids.len());
    for c in centroids {
        let mut latents = Vec::with_capacity(grid.len());
        let mut corrections = Vec::with_capacity(grid.len());
        for &tau in grid.values() {
            let z = interpolate(z_x, &c.latent, tau);
            match constraints {
                Some((set, compiled)) if !compiled.is_empty() => {
                    let (z, n, _) = correct_latent(model, &z, compiled, set.learning_rate, set.max_iterations)?;
                    latents.push(z);
                    corrections.push(n);
                }
                _ => {
                    latents.push(z);
                    corrections.push(0);
                }
            }
        }
        let h = model.latent_dim;
        let flat: Vec<f64> = latents.iter().flatten().copied().collect();
        let zs = Matrix::from_shape_vec((latents.len(), h), flat).map_err(|e| Error::Shape(e.to_string()))?;
        let decoded = model.decode_batch(&zs, DecodeMode::Inference)?;
        let labels = classifier.predict_batch(&decoded);
        let entries: Vec<PathEntry> = grid
            .values()
            .iter()
            .zip(latents)
            .zip(decoded.axis_iter(Axis(0)))
            .zip(labels.iter().zip(corrections))
            .map(|(((&tau, latent), row), (&label, corrections))| {
                let decoded = row.to_vec();
                let satisfied = constraints.is_none_or(|(_, c)| c.satisfied(&decoded));
                PathEntry {
                    tau,
                    latent,
                    decoded,
                    label,
                    corrections,
                    satisfied,
                }
            })
            .collect();
        let flagged = entries.last().is_some_and(|e| e.label != target);
        paths.push(LatentPath {
            cluster: c.cluster,
            entries,
            flagged,
        });
    }
    Ok(paths)
}

/// One decoded interpolation path from the encoding of `x` (labelled
/// `label` by the classifier) to each centroid of `target`, in cluster order.
pub fn generate_paths(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    x: &[f64],
    label: usize,
    target: usize,
    grid: &TauGrid,
) -> Result<Vec<LatentPath>> {
    check_request(model, classifier, x, label, target)?;
    let z_x = model.encode(x, label)?;
    build_paths(model, classifier, &z_x, target, grid, None)
}

/// As [`generate_paths`], with every latent corrected towards the
/// constraints before it is decoded.
pub fn generate_constrained_paths(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    x: &[f64],
    label: usize,
    target: usize,
    grid: &TauGrid,
    constraints: &ConstraintSet,
) -> Result<Vec<LatentPath>> {
    check_request(model, classifier, x, label, target)?;
    constraints.validate()?;
    let compiled = constraints.compile(&model.schema)?;
    let z_x = model.encode(x, label)?;
    build_paths(model, classifier, &z_x, target, grid, Some((constraints, &compiled)))
}

/// First, Middle and Last of a path towards `target`.
pub fn select_points(
    model: &LgmvaeModel,
    classifier: &dyn Classifier,
    path: &LatentPath,
    target: usize,
) -> Result<CeSelection> {
    let point = |e: &super::PathEntry| SelectedPoint {
        tau: e.tau,
        latent: e.latent.clone(),
        decoded: e.decoded.clone(),
        label: e.label,
    };
    let first = path
        .entries
        .iter()
        .find(|e| e.label == target)
        .ok_or(Error::NoFlip { cluster: path.cluster })?;
    let last = path
        .entries
        .last()
        .ok_or_else(|| Error::Invalid("empty path".into()))?;
    // A flip only at the endpoint leaves nothing between First and Last.
    let middle = if first.tau == last.tau {
        point(last)
    } else {
        let latent: Vec<f64> = first
            .latent
            .iter()
            .zip(&last.latent)
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        let decoded = model.decode(&latent, DecodeMode::Inference)?;
        SelectedPoint {
            tau: (first.tau + last.tau) / 2.0,
            label: classifier.predict(&decoded),
            latent,
            decoded,
        }
    };
    Ok(CeSelection {
        cluster: path.cluster,
        first: point(first),
        middle,
        last: point(last),
    })
}
