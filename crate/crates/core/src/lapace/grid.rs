use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 21;

/// Interpolation positions, strictly increasing from exactly 0 to exactly 1.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauGrid(Vec<f64>);

impl TauGrid {
    /// `steps` evenly spaced values.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Invalid(format!("a grid needs at least 2 steps, got {steps}")));
        }
        let last = (steps - 1) as f64;
        Self::new((0..steps).map(|i| i as f64 / last).collect())
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return Err(Error::Invalid("grid must start at 0 and end at 1".into()));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("grid must be strictly increasing".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for TauGrid {
    fn default() -> Self {
        Self::uniform(DEFAULT_STEPS).expect("default grid")
    }
}

impl TryFrom<Vec<f64>> for TauGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TauGrid> for Vec<f64> {
    fn from(g: TauGrid) -> Self {
        g.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = TauGrid::uniform(21).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g.values()[0], 0.0);
        assert_eq!(g.values()[20], 1.0);
        assert_eq!(g.values()[10], 0.5);
        assert!(TauGrid::uniform(1).is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TauGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TauGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TauGrid::new(vec![0.0, 0.9]).is_err());
        assert!(serde_json::from_str::<TauGrid>("[0.0, 0.7, 0.3, 1.0]").is_err());
        let g: TauGrid = serde_json::from_str("[0.0, 0.25, 1.0]").unwrap();
        assert_eq!(g.values(), &[0.0, 0.25, 1.0]);
    }
}
