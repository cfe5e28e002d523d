use serde::{Deserialize, Serialize};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Assignment of mixture components to class labels.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ClusterPartition {
    /// `clusters[y]` lists the components owned by label `y`.
    clusters: Vec<Vec<usize>>,
    n_clusters: usize,
}

impl ClusterPartition {
    /// `per_label` consecutive cluster ids for each label.
    pub fn uniform(n_labels: usize, per_label: usize) -> Result<Self> {
        if n_labels == 0 || per_label == 0 {
            return Err(Error::Config(format!(
                "partition needs labels and clusters, got {n_labels} x {per_label}"
            )));
        }
        let clusters = (0..n_labels)
            .map(|y| (y * per_label..(y + 1) * per_label).collect())
            .collect();
        Ok(Self {
            clusters,
            n_clusters: n_labels * per_label,
        })
    }

    pub fn from_sets(clusters: Vec<Vec<usize>>) -> Result<Self> {
        let n_clusters: usize = clusters.iter().map(Vec::len).sum();
        let mut seen = vec![false; n_clusters];
        for set in &clusters {
            if set.is_empty() {
                return Err(Error::Config("a label owns no clusters".into()));
            }
            for &c in set {
                if c >= n_clusters || std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Config(format!(
                        "cluster sets must partition 0..{n_clusters}"
                    )));
                }
            }
        }
        Ok(Self {
            clusters,
            n_clusters,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_labels(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters_of(&self, label: usize) -> Result<&[usize]> {
        self.clusters
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Invalid(format!("label {label} outside {} labels", self.clusters.len())))
    }

    /// Label owning `cluster`.
    pub fn label_of(&self, cluster: usize) -> Option<usize> {
        self.clusters.iter().position(|s| s.contains(&cluster))
    }

    /// Row `i` is 1 on the clusters of `labels[i]`, 0 elsewhere.
    pub fn mask(&self, labels: &[usize]) -> Result<Matrix> {
        let mut m = Matrix::zeros((labels.len(), self.n_clusters));
        for (r, &y) in labels.iter().enumerate() {
            for &c in self.clusters_of(y)? {
                m[[r, c]] = 1.0;
            }
        }
        Ok(m)
    }
}
