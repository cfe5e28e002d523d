use rayon::prelude::*;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// Reachability distances are floored here so duplicate points keep a
/// finite density.
pub const REACH_FLOOR: f64 = 1e-12;

pub const DEFAULT_K: usize = 20;

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The `k` nearest `(index, distance)` pairs, ties broken by index.
fn nearest(points: &[Vec<f64>], q: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, p)| (i, euclidean(p, q)))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if d.len() > k {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

/// Local outlier factor against a fixed reference set, with Euclidean
/// distance and exactly `k` neighbours per point.
#[derive(Clone, Debug)]
pub struct LofIndex {
    points: Vec<Vec<f64>>,
    k: usize,
    neighbours: Vec<Vec<(usize, f64)>>,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

impl LofIndex {
    pub fn new(reference: &Matrix, k: usize) -> Result<Self> {
        let n = reference.nrows();
        if k == 0 || k >= n {
            return Err(Error::Invalid(format!("LOF needs 1 <= k < n, got k={k}, n={n}")));
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LOF reference set".into()));
        }
        let points: Vec<Vec<f64>> = reference.rows().into_iter().map(|r| r.to_vec()).collect();
        let neighbours: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&points, &points[i], k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbours.iter().map(|nb| nb[k - 1].1).collect();
        let lrd = neighbours
            .iter()
            .map(|nb| Self::density(nb, &k_distance))
            .collect();
        Ok(Self {
            points,
            k,
            neighbours,
            k_distance,
            lrd,
        })
    }

    fn density(nb: &[(usize, f64)], k_distance: &[f64]) -> f64 {
        let reach: f64 = nb
            .iter()
            .map(|&(o, d)| k_distance[o].max(d).max(REACH_FLOOR))
            .sum();
        nb.len() as f64 / reach
    }

    fn factor(&self, nb: &[(usize, f64)], own: f64) -> f64 {
        nb.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / (nb.len() as f64 * own)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Score of a new point; reference points are all candidate neighbours.
    pub fn score(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.points[0].len() {
            return Err(Error::Shape(format!(
                "LOF query width {} vs reference {}",
                q.len(),
                self.points[0].len()
            )));
        }
        let nb = nearest(&self.points, q, self.k, None);
        let own = Self::density(&nb, &self.k_distance);
        Ok(self.factor(&nb, own))
    }

    /// Score of each reference point among the others.
    pub fn reference_scores(&self) -> Vec<f64> {
        self.neighbours
            .iter()
            .zip(&self.lrd)
            .map(|(nb, &own)| self.factor(nb, own))
            .collect()
    }
}
