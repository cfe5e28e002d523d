use serde::{Deserialize, Serialize};

use super::graph::Matrix;
use crate::error::{Error, Result};

/// Adam optimizer state for an ordered list of parameters.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let first: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.second
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.dim() != g.dim() || p.dim() != m.dim() {
                return Err(Error::Shape(format!(
                    "adam: param {:?}, grad {:?}, moment {:?}",
                    p.dim(),
                    g.dim(),
                    m.dim()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = array![[1.0, -2.0]];
        let mut adam = AdamState::new(1e-3, [&p]);
        adam.step(&mut [&mut p], &[array![[1.0, 1.0]]]).unwrap();
        let before = p.clone();
        let m_before = adam.first_moments()[0].clone();
        adam.step(&mut [&mut p], &[array![[0.0, 0.0]]]).unwrap();
        // m decays by beta1; the update uses the decayed moment, so params move
        // only through the leftover momentum
        assert_eq!(adam.first_moments()[0], &m_before * 0.9);

        let mut q = array![[3.0]];
        let mut fresh = AdamState::new(1e-3, [&q]);
        fresh.step(&mut [&mut q], &[array![[0.0]]]).unwrap();
        assert_eq!(q, array![[3.0]]);
        assert_eq!(fresh.step, 1);
        assert!(before.iter().zip(p.iter()).all(|(a, b)| (a - b).abs() < 1e-3));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = array![[0.5]];
        let mut adam = AdamState::new(1e-3, [&p]);
        adam.step(&mut [&mut p], &[array![[1.0]]]).unwrap();
        // m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((p[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = array![[0.0, 0.0]];
        let mut adam = AdamState::new(1e-2, [&p]);
        for _ in 0..100 {
            adam.step(&mut [&mut p], &[array![[2.5, -0.3]]]).unwrap();
        }
        assert!(p[[0, 0]] < 0.0);
        assert!(p[[0, 1]] > 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = array![[0.0, 0.0]];
        let mut adam = AdamState::new(1e-2, [&p]);
        assert!(adam.step(&mut [&mut p], &[array![[1.0]]]).is_err());
    }
}
