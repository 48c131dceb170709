use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Station-influence matrix built from pairwise distances with a thresholded
/// Gaussian kernel. Symmetric, zero diagonal, entries in `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedAdjacency {
    pub w: Array2<f64>,
    pub sigma_sq: f64,
    pub epsilon: f64,
}

impl WeightedAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.w.nrows()
    }
}

/// `W_ij = exp(-d_ij^2 / sigma_sq)` for `i != j`, zeroed below `epsilon`.
///
/// When `sigma_sq` is `None` it defaults to the variance of the nonzero
/// distances.
pub fn build_adjacency(
    distances: &Array2<f64>,
    sigma_sq: Option<f64>,
    epsilon: f64,
) -> Result<WeightedAdjacency> {
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(Error::Validation(format!(
            "distance matrix must be square, got {}x{}",
            n,
            distances.ncols()
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "epsilon must lie in [0, 1), got {epsilon}"
        )));
    }
    for i in 0..n {
        if distances[[i, i]] != 0.0 {
            return Err(Error::Validation(format!(
                "distance diagonal must be zero (node {i})"
            )));
        }
        for j in 0..n {
            let d = distances[[i, j]];
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Validation(format!(
                    "distance ({i},{j}) must be finite and nonnegative, got {d}"
                )));
            }
            if (d - distances[[j, i]]).abs() > 1e-9 * d.abs().max(1.0) {
                return Err(Error::Validation(format!(
                    "distance matrix asymmetric at ({i},{j})"
                )));
            }
        }
    }

    let sigma_sq = match sigma_sq {
        Some(s) => {
            if s <= 0.0 {
                return Err(Error::Config(format!("sigma_sq must be positive, got {s}")));
            }
            s
        }
        None => default_sigma_sq(distances)?,
    };

    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = (-distances[[i, j]].powi(2) / sigma_sq).exp();
            if v >= epsilon {
                w[[i, j]] = v;
            }
        }
    }
    Ok(WeightedAdjacency { w, sigma_sq, epsilon })
}

/// Variance of the nonzero distances; errors when every distance is zero.
pub fn default_sigma_sq(distances: &Array2<f64>) -> Result<f64> {
    let nonzero: Vec<f64> = distances.iter().copied().filter(|&d| d > 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Validation(
            "cannot infer sigma_sq: all distances are zero".into(),
        ));
    }
    let mean = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
    let var = nonzero.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / nonzero.len() as f64;
    if var <= 0.0 {
        // All nonzero distances equal; any positive bandwidth works.
        Ok(mean.powi(2))
    } else {
        Ok(var)
    }
}
