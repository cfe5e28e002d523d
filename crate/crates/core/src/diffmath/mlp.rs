use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{softmax_rows, Graph, Matrix, Var};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
    Softmax,
}

/// Fully connected layer computing `act(x W + b)`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub weight: Matrix,
    /// `1 x out`
    pub bias: Matrix,
    pub activation: Activation,
}

impl Dense {
    /// Uniform fan-in scaled initialization; zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let gain = if activation == Activation::Relu { 6.0 } else { 1.0 };
        let bound = (gain / input.max(1) as f64).sqrt();
        let weight = Matrix::from_shape_fn((input, output), |_| rng.random_range(-bound..=bound));
        Self {
            weight,
            bias: Matrix::zeros((1, output)),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// A stack of dense layers.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`; hidden layers use `hidden`, the
    /// last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Shape("an MLP needs at least input and output sizes".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::Shape(format!("zero-width layer in {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("empty layer list".into()));
        }
        for l in &layers {
            if l.bias.dim() != (1, l.output_dim()) {
                return Err(Error::Shape(format!(
                    "bias {:?} for weight {:?}",
                    l.bias.dim(),
                    l.weight.dim()
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not chain into input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Plain forward pass (no tape).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} for MLP expecting {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias.index_axis(Axis(0), 0);
            h = match layer.activation {
                Activation::Relu => z.mapv_into(|v| v.max(0.0)),
                Activation::Linear => z,
                Activation::Sigmoid => z.mapv_into(|v| 1.0 / (1.0 + (-v).exp())),
                Activation::Softmax => softmax_rows(&z),
            };
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MLP output".into()));
        }
        Ok(h)
    }

    /// Puts every weight and bias on the tape, in [`Mlp::params`] order.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    /// Recorded forward pass using vars from [`Mlp::register`].
    pub fn forward_graph(&self, g: &mut Graph, x: Var, params: &[Var]) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter vars for {} layers",
                params.len(),
                self.layers.len()
            )));
        }
        if g.value(x).ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} for MLP expecting {}",
                g.value(x).ncols(),
                self.input_dim()
            )));
        }
        let mut h = x;
        for (layer, p) in self.layers.iter().zip(params.chunks(2)) {
            let z = g.matmul(h, p[0])?;
            let z = g.add_row(z, p[1])?;
            h = match layer.activation {
                Activation::Relu => g.relu(z)?,
                Activation::Linear => z,
                Activation::Sigmoid => g.sigmoid(z)?,
                Activation::Softmax => g.softmax(z)?,
            };
        }
        if g.value(h).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MLP output".into()));
        }
        Ok(h)
    }

    /// Weight, bias, weight, bias, ...
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Matrix, activation: Activation) -> Mlp {
        let out = weight.ncols();
        Mlp::from_layers(vec![Dense {
            weight,
            bias: Matrix::zeros((1, out)),
            activation,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer() {
        let mlp = single(Matrix::eye(2), Activation::Linear);
        assert_eq!(mlp.forward(&array![[1.0, 2.0]]).unwrap(), array![[1.0, 2.0]]);
    }

    #[test]
    fn relu_layer() {
        let mlp = single(Matrix::eye(2), Activation::Relu);
        assert_eq!(mlp.forward(&array![[-1.0, 3.0]]).unwrap(), array![[0.0, 3.0]]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mlp = single(Matrix::eye(3), Activation::Softmax);
        let out = mlp.forward(&array![[0.0, 0.0, 0.0]]).unwrap();
        for v in out.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_input_width() {
        let mlp = single(Matrix::eye(2), Activation::Linear);
        assert!(matches!(mlp.forward(&array![[1.0, 2.0, 3.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mlp = single(array![[1e308, 1e308], [1e308, 1e308]], Activation::Linear);
        assert!(matches!(mlp.forward(&array![[10.0, 10.0]]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn layers_must_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Dense::init(3, 4, Activation::Relu, &mut rng);
        let b = Dense::init(5, 2, Activation::Linear, &mut rng);
        assert!(Mlp::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for out_act in [Activation::Linear, Activation::Sigmoid, Activation::Softmax] {
            let mlp = Mlp::new(&[4, 8, 8, 3], Activation::Relu, out_act, &mut rng).unwrap();
            let x = Matrix::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
            let mut g = Graph::new();
            let params = mlp.register(&mut g, true);
            let xv = g.constant(x.clone());
            let y = mlp.forward_graph(&mut g, xv, &params).unwrap();
            let plain = mlp.forward(&x).unwrap();
            for (a, b) in g.value(y).iter().zip(plain.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
