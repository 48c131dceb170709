use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datahub::WeightedAdjacency;
use crate::error::{Error, Result};

/// Degree floor protecting the normalisation against isolated nodes.
pub const DEGREE_FLOOR: f64 = 1e-6;

/// Node count above which the largest eigenvalue is found by power iteration
/// instead of a dense symmetric eigensolve.
const EXACT_EIGEN_LIMIT: usize = 512;

/// Symmetric normalised Laplacian rescaled so its spectrum fits `[-1, 1]`,
/// ready for Chebyshev polynomial filtering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledLaplacian {
    pub l_tilde: Array2<f64>,
    pub lambda_max: f64,
}

impl ScaledLaplacian {
    pub fn n_nodes(&self) -> usize {
        self.l_tilde.nrows()
    }
}

/// `L~ = 2 L_sym / lambda_max - I` with `L_sym = I - D^{-1/2} W D^{-1/2}`.
pub fn scaled_laplacian(adj: &WeightedAdjacency) -> Result<ScaledLaplacian> {
    let n = adj.n_nodes();
    if adj.w.ncols() != n {
        return Err(Error::Shape("adjacency must be square".into()));
    }
    let mut d_inv_sqrt = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = adj.w.row(i).sum();
        d_inv_sqrt[i] = 1.0 / deg.max(DEGREE_FLOOR).sqrt();
    }
    let mut l_sym = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let norm_w = d_inv_sqrt[i] * adj.w[[i, j]] * d_inv_sqrt[j];
            l_sym[[i, j]] = if i == j { 1.0 - norm_w } else { -norm_w };
        }
    }
    let lambda_max = if n <= EXACT_EIGEN_LIMIT {
        largest_eigenvalue_exact(&l_sym)
    } else {
        largest_eigenvalue_power(&l_sym, 1e-6)
    };
    // L_sym is positive semidefinite; lambda_max can only vanish on an empty
    // graph with the degree floor, where we fall back to the identity scale.
    let scale = if lambda_max.abs() < 1e-12 { 1.0 } else { lambda_max };
    let mut l_tilde = l_sym;
    for i in 0..n {
        for j in 0..n {
            l_tilde[[i, j]] = 2.0 * l_tilde[[i, j]] / scale - if i == j { 1.0 } else { 0.0 };
        }
    }
    Ok(ScaledLaplacian { l_tilde, lambda_max })
}

fn largest_eigenvalue_exact(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = dm.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn largest_eigenvalue_power(m: &Array2<f64>, tol: f64) -> f64 {
    let n = m.nrows();
    let mut v = ndarray::Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w.mapv(|x| x / norm);
        let l = next.dot(&m.dot(&next));
        if (l - lambda).abs() < tol {
            return l;
        }
        lambda = l;
        v = next;
    }
    lambda
}
