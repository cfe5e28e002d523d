use crate::error::{Error, Result};

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Mean pairwise L1 distance, or -1 when fewer than two points are given.
pub fn diversity(set: &[Vec<f64>]) -> f64 {
    if set.len() < 2 {
        return -1.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            total += l1(&set[i], &set[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Hausdorff distance between two point sets under L1.
pub fn max_set_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("set distance of an empty set".into()));
    }
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|p| to.iter().map(|q| l1(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}
