use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnyClassifier, Classifier, ClassifierConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Classifiers retrained on different subsamples of the training data.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RetrainPool {
    pub members: Vec<AnyClassifier>,
    pub subset_fraction: f64,
    pub seeds: Vec<u64>,
}

impl RetrainPool {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Classifier> {
        self.members.iter().map(|m| m as &dyn Classifier)
    }
}

/// Member `i` trains on a `subset_fraction` sample drawn with seed
/// `seed + i`, kept in original row order. The trainer's own seed is the
/// base config's, so a fraction of 1.0 reproduces the base classifier.
pub fn build_retrain_pool(
    dataset: &Dataset,
    n_classes: usize,
    base: &ClassifierConfig,
    pool_size: usize,
    subset_fraction: f64,
    seed: u64,
) -> Result<RetrainPool> {
    if pool_size == 0 {
        return Err(Error::Config("pool_size must be at least 1".into()));
    }
    if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "subset_fraction {subset_fraction} outside (0, 1]"
        )));
    }
    let n = dataset.len();
    let take = ((n as f64) * subset_fraction).round() as usize;
    let seeds: Vec<u64> = (0..pool_size as u64).map(|i| seed.wrapping_add(i)).collect();
    let subsets: Vec<Vec<usize>> = seeds
        .iter()
        .map(|&s| {
            let mut idx: Vec<usize> = (0..n).collect();
            if take < n {
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
                idx.truncate(take);
                idx.sort_unstable();
            }
            idx
        })
        .collect();
    for idx in &subsets {
        let first = idx.first().map(|&i| dataset.y_true[i]);
        if first.is_none() || idx.iter().all(|&i| Some(dataset.y_true[i]) == first) {
            return Err(Error::Invalid(format!(
                "retrain subset of {} rows does not contain two classes",
                idx.len()
            )));
        }
    }
    let members = subsets
        .par_iter()
        .map(|idx| base.train(&dataset.subset(idx), n_classes))
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrainPool {
        members,
        subset_fraction,
        seeds,
    })
}
