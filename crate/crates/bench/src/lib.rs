//! Shared fixtures for the criterion benchmarks.

use ndarray::Array2;

use stgkd_core::datahub::WeightedAdjacency;
use stgkd_core::model::{build_model, scaled_laplacian, ModelConfig, ScaledLaplacian, StGcn};

/// A small but non-trivial network: 24 nodes on a ring with decaying
/// long-range links, desk-scale channel widths.
pub fn fixture(n_nodes: usize) -> (StGcn, ScaledLaplacian, ModelConfig) {
    let cfg = ModelConfig::new([1, 8, 16], [16, 8, 32], n_nodes, 12);
    let model = build_model(&cfg, 1234).expect("fixture model builds");
    let mut w = Array2::zeros((n_nodes, n_nodes));
    for i in 0..n_nodes {
        for j in 0..n_nodes {
            if i != j {
                let d = (i as f64 - j as f64).abs().min((n_nodes - 1) as f64 - (i as f64 - j as f64).abs());
                w[[i, j]] = (-d * d / 4.0).exp();
            }
        }
    }
    let lap = scaled_laplacian(&WeightedAdjacency { w, sigma_sq: 1.0, epsilon: 0.0 })
        .expect("fixture laplacian");
    (model, lap, cfg)
}
