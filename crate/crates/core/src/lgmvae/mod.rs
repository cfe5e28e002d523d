//! Label-conditional Gaussian mixture VAE.
//!
//! Each class label owns a disjoint set of mixture components. The encoder
//! produces cluster responsibilities restricted to the label's components,
//! then a Gaussian posterior over the latent conditioned on the input, the
//! label, and those responsibilities. The prior table of component means and
//! log-variances is learned through the latent KL term; after training the
//! component means serve as class prototypes.

mod model;
mod partition;
mod train;

pub use model::{reparameterize, Centroid, DecodeMode, ElboTerms, LgmvaeModel, LossWeights};
pub use partition::ClusterPartition;
pub use train::{check_centroids, train, validate_centroids, CentroidCheck, EpochLoss, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct LgmvaeConfig {
    pub latent_dim: usize,
    pub clusters_per_class: usize,
    pub hidden: Vec<usize>,
    pub loss_weights: LossWeights,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Standard deviation of the initial prior means.
    pub prior_init_scale: f64,
    pub seed: u64,
}

impl Default for LgmvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            clusters_per_class: 5,
            hidden: vec![512, 512, 512],
            loss_weights: LossWeights::default(),
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 2000,
            patience: 20,
            validation_fraction: 0.1,
            prior_init_scale: 0.1,
            seed: 0,
        }
    }
}

impl LgmvaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.clusters_per_class == 0 {
            return bad("clusters_per_class must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if !(self.prior_init_scale >= 0.0 && self.prior_init_scale.is_finite()) {
            return bad("prior_init_scale must be finite and non-negative");
        }
        let w = self.loss_weights;
        if [w.cluster_kl, w.latent_kl, w.reconstruction]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}
