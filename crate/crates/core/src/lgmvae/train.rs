use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::LgmvaeModel;
use super::LgmvaeConfig;
use crate::classifiers::Classifier;
use crate::data::{split_indices, Dataset, SplitSpec, TabularSchema};
use crate::diffmath::{AdamState, Matrix};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training loss over the epoch; absent for the untrained entry.
    pub train: Option<f64>,
    pub validation: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Entry 0 is the untrained model.
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn batch_loss(model: &LgmvaeModel, x: &Matrix, labels: &[usize], eps: &Matrix) -> Result<f64> {
    let terms = model.elbo_terms(x, labels, eps)?;
    let loss = terms.weighted(&model.loss_weights);
    if !loss.is_finite() {
        return Err(Error::Training("validation loss is not finite".into()));
    }
    Ok(loss)
}

/// Fits an L-GMVAE to `dataset`'s classifier-predicted labels with Adam on
/// the weighted negated ELBO, early-stopping on a held-out validation split.
/// The returned model holds the parameters of the best validation epoch.
pub fn train(dataset: &Dataset, schema: &TabularSchema, config: &LgmvaeConfig) -> Result<(LgmvaeModel, TrainReport)> {
    let labels = dataset.predicted()?;
    if dataset.width() != schema.encoded_width() {
        return Err(Error::Shape(format!(
            "dataset width {} vs schema width {}",
            dataset.width(),
            schema.encoded_width()
        )));
    }
    let mut model = LgmvaeModel::new(schema.clone(), config)?;
    let parts = split_indices(
        dataset.len(),
        &SplitSpec::new(&[1.0 - config.validation_fraction, config.validation_fraction], config.seed),
    )?;
    let (train_idx, val_idx) = (&parts[0], &parts[1]);
    let val_x = dataset.x.select(Axis(0), val_idx);
    let val_y: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let val_eps = noise(&mut rng, val_idx.len(), model.latent_dim);
    let mut adam = AdamState::new(config.learning_rate, model.params());

    let initial = batch_loss(&model, &val_x, &val_y, &val_eps)?;
    let mut history = vec![EpochLoss {
        epoch: 0,
        train: None,
        validation: initial,
    }];
    let mut best = (initial, 0usize, model.clone());
    let mut order = train_idx.clone();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx = dataset.x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let eps = noise(&mut rng, batch.len(), model.latent_dim);
            let (loss, grads) = model
                .loss_and_gradients(&bx, &by, &eps)
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("epoch {epoch}: loss diverged")));
            }
            total += loss * batch.len() as f64;
            adam.step(&mut model.params_mut(), &grads)?;
        }
        let validation = batch_loss(&model, &val_x, &val_y, &val_eps)
            .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
        history.push(EpochLoss {
            epoch,
            train: Some(total / order.len() as f64),
            validation,
        });
        if validation < best.0 {
            best = (validation, epoch, model.clone());
        } else if epoch - best.1 >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, best_model) = best;
    Ok((
        best_model,
        TrainReport {
            history,
            best_epoch,
            stopped_early,
        },
    ))
}

/// Outcome of checking each decoded centroid against the classifier.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CentroidCheck {
    /// `(cluster, assigned label, predicted label)` for every miss.
    pub failing: Vec<(usize, usize, usize)>,
    pub n_clusters: usize,
}

impl CentroidCheck {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.failing.len() as f64 / self.n_clusters as f64
    }

    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

pub fn check_centroids(model: &LgmvaeModel, classifier: &dyn Classifier) -> Result<CentroidCheck> {
    if classifier.input_width() != model.input_width() {
        return Err(Error::Shape(format!(
            "classifier width {} vs model width {}",
            classifier.input_width(),
            model.input_width()
        )));
    }
    let mut failing = Vec::new();
    for label in 0..model.n_labels() {
        for c in model.centroids(label)? {
            let predicted = classifier.predict(&c.decoded);
            if predicted != label {
                failing.push((c.cluster, label, predicted));
            }
        }
    }
    Ok(CentroidCheck {
        failing,
        n_clusters: model.partition.n_clusters(),
    })
}

/// Runs [`check_centroids`] and sets the recourse-ready flag accordingly.
pub fn validate_centroids(model: &mut LgmvaeModel, classifier: &dyn Classifier) -> Result<CentroidCheck> {
    let check = check_centroids(model, classifier)?;
    model.recourse_ready = check.passed();
    Ok(check)
}
