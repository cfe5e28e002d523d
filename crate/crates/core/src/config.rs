//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierConfig, MlpClassifierConfig};
use crate::error::{Error, Result};
use crate::lapace::{ConstraintSet, TauGrid};
use crate::lgmvae::LgmvaeConfig;
use crate::metrics::EvaluationConfig;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    /// The built-in two-class blob set.
    Blobs {
        #[serde(default = "default_rows")]
        rows_per_class: usize,
    },
    Csv { csv: PathBuf, schema: PathBuf },
}

fn default_rows() -> usize {
    2000
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Blobs {
            rows_per_class: default_rows(),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.3 }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LapaceConfig {
    pub grid_steps: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// JSON list of constraint terms used by `generate --constrained`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraints: Option<PathBuf>,
}

impl Default for LapaceConfig {
    fn default() -> Self {
        let c = ConstraintSet::default();
        Self {
            grid_steps: crate::lapace::DEFAULT_STEPS,
            learning_rate: c.learning_rate,
            max_iterations: c.max_iterations,
            constraints: None,
        }
    }
}

impl LapaceConfig {
    pub fn grid(&self) -> Result<TauGrid> {
        TauGrid::uniform(self.grid_steps).map_err(|e| Error::Config(e.to_string()))
    }

    /// Correction settings, with terms from the constraint file if set.
    pub fn constraint_set(&self) -> Result<ConstraintSet> {
        let terms = match &self.constraints {
            Some(p) => ConstraintSet::load_terms(p)?,
            None => Vec::new(),
        };
        Ok(ConstraintSet {
            terms,
            learning_rate: self.learning_rate,
            max_iterations: self.max_iterations,
        })
    }
}

fn default_classifier() -> ClassifierConfig {
    ClassifierConfig::Mlp(MlpClassifierConfig::default())
}

/// Everything a run needs. The master `seed` overrides the seeds of the
/// classifier, L-GMVAE and evaluation sections.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_classifier")]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub lgmvae: LgmvaeConfig,
    #[serde(default)]
    pub lapace: LapaceConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            classifier: default_classifier(),
            lgmvae: LgmvaeConfig::default(),
            lapace: LapaceConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    /// Parses `path`, resolves relative file references against its
    /// directory, and checks that they exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataConfig::Csv { csv, schema } = &mut cfg.data {
            resolve(csv);
            resolve(schema);
        }
        if let Some(p) = &mut cfg.lapace.constraints {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with `seed` pushed into every component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        match &mut self.classifier {
            ClassifierConfig::Mlp(c) => c.seed = seed,
            ClassifierConfig::Forest(c) => c.seed = seed,
        }
        self.lgmvae.seed = seed;
        self.evaluation.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |p: &Path| -> Result<()> {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("file not found: {}", p.display())))
            }
        };
        match &self.data {
            DataConfig::Csv { csv, schema } => {
                missing(csv)?;
                missing(schema)?;
            }
            DataConfig::Blobs { rows_per_class } if *rows_per_class < 2 => {
                return Err(Error::Config("rows_per_class must be at least 2".into()));
            }
            DataConfig::Blobs { .. } => {}
        }
        if let Some(p) = &self.lapace.constraints {
            missing(p)?;
        }
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("test_fraction {f} outside (0, 1)")));
        }
        self.lgmvae.validate()?;
        self.lapace.grid()?;
        self.lapace.constraint_set()?.validate()?;
        self.evaluation.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn master_seed_reaches_components() {
        let cfg = RunConfig::from_toml("seed = 7\n[classifier]\nkind = \"forest\"\nn_trees = 5\nseed = 99\n").unwrap();
        match &cfg.classifier {
            ClassifierConfig::Forest(f) => {
                assert_eq!(f.seed, 7);
                assert_eq!(f.n_trees, 5);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.lgmvae.seed, 7);
        assert_eq!(cfg.evaluation.seed, 7);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default().with_seed(3);
        cfg.lgmvae.hidden = vec![16, 16];
        cfg.lgmvae.loss_weights.cluster_kl = 0.5;
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("unknown = 1").is_err());
        let bad = RunConfig::from_toml("[split]\ntest_fraction = 1.5").unwrap();
        assert!(bad.validate().is_err());
        let bad = RunConfig::from_toml("[lapace]\ngrid_steps = 1").unwrap();
        assert!(bad.validate().is_err());
        let bad = RunConfig::from_toml("[data]\nsource = \"csv\"\ncsv = \"/nonexistent/a.csv\"\nschema = \"/nonexistent/s.json\"").unwrap();
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("/nonexistent/a.csv"), "{err}");
    }
}
