#![allow(dead_code)]

use std::sync::OnceLock;

use lapace_core::artifact::{ClassifierArtifact, LgmvaeArtifact};
use lapace_core::config::{DataConfig, RunConfig};
use lapace_core::pipeline::{prepare_data, train_classifier, train_lgmvae, PreparedData};

pub struct Fixture {
    pub config: RunConfig,
    pub data: PreparedData,
    pub classifier: ClassifierArtifact,
    pub lgmvae: LgmvaeArtifact,
}

pub fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data = DataConfig::Blobs { rows_per_class: 500 };
    cfg.lgmvae.hidden = vec![32, 32, 32];
    cfg.evaluation.test_size = 12;
    cfg.evaluation.repeats = 2;
    cfg.evaluation.pool_size = 4;
    cfg.with_seed(seed)
}

/// A recourse-ready model on small reference blobs, trained once per test
/// binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let config = small_config(0);
        let data = prepare_data(&config).unwrap();
        let classifier = train_classifier(&config, &data).unwrap();
        let lgmvae = train_lgmvae(&config, &data, &classifier).unwrap();
        assert!(lgmvae.model.recourse_ready, "{:?}", lgmvae.centroid_check);
        Fixture {
            config,
            data,
            classifier,
            lgmvae,
        }
    })
}

/// Test rows with their predicted label and the other label as target.
pub fn test_inputs(n: usize) -> Vec<(Vec<f64>, usize, usize)> {
    use lapace_core::classifiers::Classifier;
    let f = fixture();
    (0..n)
        .map(|i| {
            let x = f.data.test.row(i);
            let y = f.classifier.classifier.predict(&x);
            (x, y, 1 - y)
        })
        .collect()
}
