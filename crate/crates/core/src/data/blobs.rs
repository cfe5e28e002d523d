use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::schema::{Feature, LabelSpec, TabularSchema};
use super::table::{RawTable, RawValue};
use crate::error::{Error, Result};

/// Gaussian blobs, several per class, optionally with one categorical
/// feature whose level is tied to the generating center.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct BlobConfig {
    pub n_per_class: usize,
    /// class -> centers -> coordinates
    pub centers: Vec<Vec<Vec<f64>>>,
    pub spread: f64,
    /// 0 for no categorical feature.
    #[serde(default)]
    pub categorical_levels: usize,
    /// Probability that a row takes its center's preferred level.
    #[serde(default = "default_purity")]
    pub categorical_purity: f64,
    pub seed: u64,
}

fn default_purity() -> f64 {
    0.85
}

/// An unfitted schema and the raw rows it describes.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTable {
    pub schema: TabularSchema,
    pub table: RawTable,
}

/// Continuous-only blobs.
pub fn make_blobs(
    n_per_class: usize,
    centers: &[Vec<Vec<f64>>],
    spread: f64,
    seed: u64,
) -> Result<SyntheticTable> {
    BlobConfig {
        n_per_class,
        centers: centers.to_vec(),
        spread,
        categorical_levels: 0,
        categorical_purity: default_purity(),
        seed,
    }
    .generate()
}

/// Two classes, three centers each, five continuous features and one
/// three-level categorical feature; 2,000 rows per class.
pub fn reference_blob_config(seed: u64) -> BlobConfig {
    let centers = vec![
        vec![
            vec![2.0, 2.0, 2.0, 2.0, 2.0],
            vec![2.0, 8.0, 3.0, 8.0, 5.0],
            vec![7.0, 3.0, 5.0, 2.0, 8.0],
        ],
        vec![
            vec![8.0, 8.0, 8.0, 8.0, 8.0],
            vec![8.0, 2.0, 8.0, 7.0, 3.0],
            vec![3.0, 7.0, 7.0, 2.0, 7.0],
        ],
    ];
    BlobConfig {
        n_per_class: 2000,
        centers,
        spread: 0.9,
        categorical_levels: 3,
        categorical_purity: default_purity(),
        seed,
    }
}

pub fn reference_blobs(seed: u64) -> SyntheticTable {
    reference_blob_config(seed)
        .generate()
        .expect("reference blob configuration is valid")
}

impl BlobConfig {
    pub fn generate(&self) -> Result<SyntheticTable> {
        if self.centers.is_empty() || self.centers.iter().any(|c| c.is_empty()) {
            return Err(Error::Invalid("every class needs at least one center".into()));
        }
        if !(self.spread > 0.0) || !self.spread.is_finite() {
            return Err(Error::Invalid(format!("degenerate spread {}", self.spread)));
        }
        let dim = self.centers[0][0].len();
        if dim == 0 || self.centers.iter().flatten().any(|c| c.len() != dim) {
            return Err(Error::Invalid("centers must share a positive dimension".into()));
        }
        if self.categorical_levels == 1 {
            return Err(Error::Invalid("a categorical feature needs at least two levels".into()));
        }

        let mut features: Vec<Feature> = (0..dim).map(|i| Feature::continuous(format!("x{i}"))).collect();
        let level_names: Vec<String> = (0..self.categorical_levels)
            .map(|i| ((b'a' + i as u8) as char).to_string())
            .collect();
        if self.categorical_levels > 0 {
            let refs: Vec<&str> = level_names.iter().map(String::as_str).collect();
            features.push(Feature::categorical("cat", &refs));
        }
        let n_classes = self.centers.len().max(2);
        let schema = TabularSchema::new(
            features,
            LabelSpec {
                name: "label".into(),
                classes: (0..n_classes).map(|c| c.to_string()).collect(),
            },
        )?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.spread).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut table = RawTable::default();
        let mut center_id = 0;
        for (class, centers) in self.centers.iter().enumerate() {
            for i in 0..self.n_per_class {
                let which = i % centers.len();
                let center = &centers[which];
                let mut row: Vec<RawValue> = center
                    .iter()
                    .map(|&c| RawValue::Number(c + noise.sample(&mut rng)))
                    .collect();
                if self.categorical_levels > 0 {
                    let preferred = (center_id + which) % self.categorical_levels;
                    let level = if rng.random::<f64>() < self.categorical_purity {
                        preferred
                    } else {
                        rng.random_range(0..self.categorical_levels)
                    };
                    row.push(RawValue::Level(level_names[level].clone()));
                }
                table.rows.push(row);
                table.labels.push(class);
            }
            center_id += centers.len();
        }
        Ok(SyntheticTable { schema, table })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_blob_mean_near_center() {
        let s = make_blobs(1000, &[vec![vec![0.0, 0.0]]], 0.1, 9).unwrap();
        for j in 0..2 {
            let mean: f64 = s.table.rows.iter().map(|r| r[j].as_number().unwrap()).sum::<f64>() / 1000.0;
            assert!(mean.abs() < 0.05, "{mean}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = reference_blobs(5);
        let b = reference_blobs(5);
        assert_eq!(a, b);
        assert_ne!(a.table, reference_blobs(6).table);
    }

    #[test]
    fn reference_shape() {
        let s = reference_blobs(0);
        assert_eq!(s.table.len(), 4000);
        assert_eq!(s.schema.features.len(), 6);
        assert_eq!(s.schema.encoded_width(), 8);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(make_blobs(10, &[vec![vec![0.0]]], 0.0, 0).is_err());
        assert!(make_blobs(10, &[vec![]], 1.0, 0).is_err());
        assert!(make_blobs(10, &[vec![vec![0.0]], vec![vec![0.0, 1.0]]], 1.0, 0).is_err());
    }
}
