//! Exact k-nearest-neighbor graphs.
//!
//! Row `i` lists the `k` points closest to point `i` under squared Euclidean
//! distance, excluding `i` itself, ordered by `(distance, index)`. The index
//! tie-break makes rows unique even with duplicated coordinates, so every
//! construction path yields the same graph.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Below this many distance terms rows are computed on the calling thread.
const PARALLEL_WORK: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    neighbors: Vec<usize>,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.n).map(move |i| self.row(i))
    }

    /// One line per point: the neighbor indices separated by spaces.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in self.rows() {
            let mut first = true;
            for j in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{j}");
            }
            s.push('\n');
        }
        s
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn check(data: &[f64], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::InvalidInput("feature dimension must be >= 1".into()));
    }
    if data.len() % dim != 0 {
        return Err(Error::InvalidInput(format!(
            "{} values do not form rows of width {dim}",
            data.len()
        )));
    }
    if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite entry in row {}", pos / dim)));
    }
    let n = data.len() / dim;
    if k >= n {
        return Err(Error::InsufficientPoints { n, k });
    }
    Ok(n)
}

fn nearest_row(data: &[f64], dim: usize, k: usize, i: usize) -> Vec<usize> {
    let n = data.len() / dim;
    let xi = &data[i * dim..(i + 1) * dim];
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| (sq_dist(xi, &data[j * dim..(j + 1) * dim]), j))
        .collect();
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_distance_then_index);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_distance_then_index);
    cand.into_iter().map(|(_, j)| j).collect()
}

fn build(data: &[f64], dim: usize, k: usize) -> Result<KnnGraph> {
    let n = check(data, dim, k)?;
    let rows: Vec<Vec<usize>> = if n * n * dim >= PARALLEL_WORK {
        (0..n).into_par_iter().map(|i| nearest_row(data, dim, k, i)).collect()
    } else {
        (0..n).map(|i| nearest_row(data, dim, k, i)).collect()
    };
    Ok(KnnGraph {
        n,
        k,
        neighbors: rows.concat(),
    })
}

/// kNN graph over 3-D coordinates.
pub fn knn_graph(points: &[[f64; 3]], k: usize) -> Result<KnnGraph> {
    build(points.as_flattened(), 3, k)
}

/// kNN graph over row-major feature vectors of width `dim`.
pub fn feature_knn(features: &[f64], dim: usize, k: usize) -> Result<KnnGraph> {
    build(features, dim, k)
}

/// Reference construction: the full distance matrix, every row fully sorted.
pub fn knn_graph_bruteforce(features: &[f64], dim: usize, k: usize) -> Result<KnnGraph> {
    let n = check(features, dim, k)?;
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let dist: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| sq_dist(row(i), row(j))).collect()).collect();
    let mut neighbors = Vec::with_capacity(n * k);
    for (i, di) in dist.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| di[a].total_cmp(&di[b]).then(a.cmp(&b)));
        neighbors.extend(order.into_iter().filter(|&j| j != i).take(k));
    }
    Ok(KnnGraph { n, k, neighbors })
}
