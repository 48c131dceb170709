use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::datahub::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::{ScaledLaplacian, StGcn};

/// One point of the 2-D hidden-feature embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterRow {
    pub label: String,
    pub sample: usize,
    pub x: f64,
    pub y: f64,
}

/// Joint 2-D embedding of hidden features from several models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenProjection {
    pub rows: Vec<ScatterRow>,
    /// Fraction of total variance captured by each of the two axes.
    pub explained_variance: [f64; 2],
}

impl HiddenProjection {
    pub fn csv(&self) -> String {
        let mut out = String::from("label,sample,x,y\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.label, r.sample, r.x, r.y));
        }
        out
    }
}

/// Channel-averaged final hidden-block activations, one feature row of
/// length `T * N` per sample. Averaging over channels puts models with
/// different widths into a common feature space.
fn hidden_features(
    model: &StGcn,
    lap: &ScaledLaplacian,
    data: &WindowedDataset,
    samples: usize,
) -> Result<Array2<f64>> {
    let idx: Vec<usize> = (0..samples.min(data.n_samples())).collect();
    let x: Array4<f64> = data.inputs.select(ndarray::Axis(0), &idx);
    let (_, taps) = model.forward_with_taps(&x, lap)?;
    let tap = taps
        .temporal
        .last()
        .ok_or_else(|| Error::Validation("model produced no temporal taps".into()))?;
    let (b, t, n, c) = tap.dim();
    let mut f = Array2::zeros((b, t * n));
    for bi in 0..b {
        for ti in 0..t {
            for ni in 0..n {
                let mut acc = 0.0;
                for ci in 0..c {
                    acc += tap[[bi, ti, ni, ci]];
                }
                f[[bi, ti * n + ni]] = acc / c as f64;
            }
        }
    }
    Ok(f)
}

/// Projects the final hidden-block features of several models into a shared
/// 2-D space with principal component analysis, fitted jointly over all
/// models so their clusters are directly comparable. The decomposition works
/// on the sample-by-sample Gram matrix, so the cost is governed by the row
/// count rather than the feature length.
pub fn export_hidden_projection(
    models: &[(String, &StGcn)],
    lap: &ScaledLaplacian,
    data: &WindowedDataset,
    samples: usize,
) -> Result<HiddenProjection> {
    if models.is_empty() {
        return Err(Error::EmptyInput("no models supplied for projection".into()));
    }
    if samples == 0 || data.is_empty() {
        return Err(Error::EmptyInput("projection needs at least one sample".into()));
    }
    let mut blocks = Vec::with_capacity(models.len());
    let mut width = None;
    for (label, model) in models {
        let f = hidden_features(model, lap, data, samples)?;
        match width {
            None => width = Some(f.ncols()),
            Some(w) if w == f.ncols() => {}
            Some(w) => {
                return Err(Error::Shape(format!(
                    "model {label} yields {} hidden features, expected {w}; models must \
                     share input window, temporal kernel and node count",
                    f.ncols()
                )))
            }
        }
        blocks.push((label.clone(), f));
    }
    let width = width.unwrap();
    let rows: usize = blocks.iter().map(|(_, f)| f.nrows()).sum();
    if rows < 2 {
        return Err(Error::InsufficientRows { required: 2, got: rows });
    }

    let mut f = Array2::zeros((rows, width));
    let mut offset = 0;
    for (_, block) in &blocks {
        f.slice_mut(s![offset..offset + block.nrows(), ..]).assign(block);
        offset += block.nrows();
    }
    // Centre the joint feature matrix column-wise.
    let mean = f.mean_axis(ndarray::Axis(0)).unwrap();
    for mut row in f.rows_mut() {
        row -= &mean;
    }

    // Gram trick: eigenvectors of F Fᵀ give the scores directly.
    let mut gram = DMatrix::zeros(rows, rows);
    for i in 0..rows {
        for j in i..rows {
            let v = f.row(i).dot(&f.row(j));
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let total_variance: f64 = (0..rows).map(|i| gram[(i, i)]).sum();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut coords = Array2::zeros((rows, 2));
    let mut explained = [0.0; 2];
    for axis in 0..2 {
        let k = order[axis];
        let lambda = eig.eigenvalues[k].max(0.0);
        // Score along a principal axis = sqrt(lambda) * eigenvector entry.
        let scale = lambda.sqrt();
        for i in 0..rows {
            coords[[i, axis]] = scale * eig.eigenvectors[(i, k)];
        }
        explained[axis] = if total_variance > 0.0 { lambda / total_variance } else { 0.0 };
    }

    let mut out_rows = Vec::with_capacity(rows);
    let mut offset = 0;
    for (label, block) in &blocks {
        for sample in 0..block.nrows() {
            out_rows.push(ScatterRow {
                label: label.clone(),
                sample,
                x: coords[[offset + sample, 0]],
                y: coords[[offset + sample, 1]],
            });
        }
        offset += block.nrows();
    }
    Ok(HiddenProjection { rows: out_rows, explained_variance: explained })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::datahub::{NormStats, WeightedAdjacency};
    use crate::model::{build_model, scaled_laplacian, ModelConfig};

    fn toy_data(n_samples: usize) -> WindowedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        WindowedDataset {
            inputs: Array4::from_shape_simple_fn((n_samples, 6, 4, 1), || rng.gen_range(-1.0..1.0)),
            targets: Array4::from_shape_simple_fn((n_samples, 3, 4, 1), || {
                rng.gen_range(40.0..70.0)
            }),
            stats: NormStats { mean: 55.0, std: 8.0 },
            interval_minutes: 5,
        }
    }

    fn toy_lap() -> ScaledLaplacian {
        let mut w = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    w[[i, j]] = 1.0;
                }
            }
        }
        scaled_laplacian(&WeightedAdjacency { w, sigma_sq: 1.0, epsilon: 0.0 }).unwrap()
    }

    fn toy_model(channels_b2: [usize; 3], seed: u64) -> StGcn {
        let mut cfg = ModelConfig::new([1, 2, 3], channels_b2, 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        build_model(&cfg, seed).unwrap()
    }

    #[test]
    fn projection_shapes_and_variance() {
        let a = toy_model([3, 2, 4], 52);
        let b = toy_model([3, 4, 2], 53);
        let data = toy_data(8);
        let lap = toy_lap();
        let models = vec![("teacher".to_string(), &a), ("student".to_string(), &b)];
        let p = export_hidden_projection(&models, &lap, &data, 5).unwrap();
        assert_eq!(p.rows.len(), 10);
        assert_eq!(p.rows.iter().filter(|r| r.label == "teacher").count(), 5);
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
        assert!(p.explained_variance[0] <= 1.0 + 1e-12);
        assert!(p.explained_variance.iter().all(|v| *v >= 0.0));
        assert!(p.rows.iter().all(|r| r.x.is_finite() && r.y.is_finite()));
    }

    #[test]
    fn projection_matches_variance_of_planar_data() {
        // If the Gram-trick scores are right, reprojecting recovers at least
        // as much variance on axis one as on axis two, and the axes are
        // orthogonal.
        let a = toy_model([3, 2, 4], 54);
        let data = toy_data(12);
        let lap = toy_lap();
        let models = vec![("only".to_string(), &a)];
        let p = export_hidden_projection(&models, &lap, &data, 12).unwrap();
        let xs: Vec<f64> = p.rows.iter().map(|r| r.x).collect();
        let ys: Vec<f64> = p.rows.iter().map(|r| r.y).collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        assert!(var(&xs) >= var(&ys) - 1e-9);
        let dot: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let norm = var(&xs).sqrt() * var(&ys).sqrt();
        if norm > 1e-12 {
            assert!((dot / norm).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let a = toy_model([3, 2, 4], 55);
        let data = toy_data(4);
        let lap = toy_lap();
        assert!(export_hidden_projection(&[], &lap, &data, 4).is_err());
        let models = vec![("a".to_string(), &a)];
        assert!(export_hidden_projection(&models, &lap, &data, 0).is_err());
    }
}
