use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, vote, Classifier};
use crate::data::Dataset;
use crate::diffmath::{softmax_rows, Activation, AdamState, Graph, Matrix, Mlp};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct MlpClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            epochs: 40,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

/// Feed-forward network with a softmax head over class logits.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    net: Mlp,
}

pub fn train_mlp_classifier(train: &Dataset, n_classes: usize, config: &MlpClassifierConfig) -> Result<MlpClassifier> {
    MlpClassifier::fit(&train.x, &train.y_true, n_classes, config)
}

impl MlpClassifier {
    pub fn fit(x: &Matrix, labels: &[usize], n_classes: usize, config: &MlpClassifierConfig) -> Result<Self> {
        check_training_set(x, labels, n_classes)?;
        if labels.iter().all(|&y| y == labels[0]) {
            return Err(Error::Invalid(
                "MLP classifier needs at least two classes in its training data".into(),
            ));
        }
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![x.ncols()];
        sizes.extend(&config.hidden);
        sizes.push(n_classes);
        let mut net = Mlp::new(&sizes, Activation::Relu, Activation::Linear, &mut rng)?;
        let mut adam = AdamState::new(config.learning_rate, net.params());

        let mut order: Vec<usize> = (0..x.nrows()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let bx = x.select(Axis(0), batch);
                let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let mut g = Graph::new();
                let params = net.register(&mut g, true);
                let input = g.constant(bx);
                let logits = net.forward_graph(&mut g, input, &params)?;
                let loss = g.softmax_cross_entropy(logits, &by)?;
                if !g.scalar(loss).is_finite() {
                    return Err(Error::Training("classifier loss diverged".into()));
                }
                let grads = g.backward(loss)?;
                let grads: Vec<Matrix> = params.iter().map(|&p| grads.wrt(p)).collect();
                adam.step(&mut net.params_mut(), &grads)?;
            }
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    fn logits(&self, x: &Matrix) -> Matrix {
        // Width is checked by callers through `input_width`; a mismatch here
        // is a programming error.
        self.net.forward(x).expect("classifier input width")
    }
}

impl Classifier for MlpClassifier {
    fn input_width(&self) -> usize {
        self.net.input_dim()
    }

    fn n_classes(&self) -> usize {
        self.net.output_dim()
    }

    fn predict_proba(&self, x: &[f64]) -> Option<Vec<f64>> {
        let row = Matrix::from_shape_vec((1, x.len()), x.to_vec()).ok()?;
        Some(softmax_rows(&self.logits(&row)).row(0).to_vec())
    }

    fn predict(&self, x: &[f64]) -> usize {
        let row = Matrix::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        vote(&self.logits(&row).row(0).to_vec())
    }

    fn predict_batch(&self, x: &Matrix) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| vote(&r.to_vec()))
            .collect()
    }
}
