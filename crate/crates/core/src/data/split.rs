use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractions of a seeded random partition.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: &[f64], seed: u64) -> Self {
        Self {
            fractions: fractions.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.fractions.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::Invalid(format!(
                "split fractions must be positive: {:?}",
                self.fractions
            )));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "split fractions sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

/// Shuffles `0..n` with the spec's seed and cuts it into consecutive parts.
/// Every part but the last gets `floor(fraction * n)` rows; the last takes
/// the remainder.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut parts = Vec::with_capacity(spec.fractions.len());
    let mut start = 0;
    for (i, f) in spec.fractions.iter().enumerate() {
        let end = if i + 1 == spec.fractions.len() {
            n
        } else {
            (start + (f * n as f64).floor() as usize).min(n)
        };
        if end == start {
            return Err(Error::Invalid(format!(
                "split part {i} of {n} rows would be empty"
            )));
        }
        parts.push(idx[start..end].to_vec());
        start = end;
    }
    Ok(parts)
}
