use ndarray::{Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TrafficTensor;

use super::SpeedMatrix;

/// Z-score statistics computed on the training split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Floor applied to the standard deviation so constant series normalise to 0.
pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn from_values<'a>(values: impl Iterator<Item = &'a f64>) -> NormStats {
        let v: Vec<f64> = values.copied().collect();
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len().max(1) as f64;
        NormStats {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Supervised samples: z-scored inputs `(samples, M, N, 1)` and targets in
/// original units `(samples, h, N, 1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub inputs: TrafficTensor,
    pub targets: TrafficTensor,
    pub stats: NormStats,
    pub interval_minutes: u32,
}

impl WindowedDataset {
    pub fn n_samples(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn input_window(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples() == 0
    }
}

/// All admissible sliding windows of a series, stride 1: `(inputs, targets)`
/// as raw (unnormalised) start indices `0..T-M-h+1`.
pub fn sliding_windows(values: ArrayView2<f64>, m: usize, h: usize) -> Vec<(usize, usize)> {
    let t = values.nrows();
    if t < m + h {
        return Vec::new();
    }
    (0..=t - m - h).map(|s| (s, s + m)).collect()
}

fn windows_to_tensors(
    values: ArrayView2<f64>,
    m: usize,
    h: usize,
    stats: NormStats,
    interval_minutes: u32,
) -> WindowedDataset {
    let n = values.ncols();
    let starts = sliding_windows(values, m, h);
    let s = starts.len();
    let mut inputs = Array4::zeros((s, m, n, 1));
    let mut targets = Array4::zeros((s, h, n, 1));
    for (k, &(x0, y0)) in starts.iter().enumerate() {
        for t in 0..m {
            for node in 0..n {
                inputs[[k, t, node, 0]] = stats.normalize(values[[x0 + t, node]]);
            }
        }
        for t in 0..h {
            for node in 0..n {
                targets[[k, t, node, 0]] = values[[y0 + t, node]];
            }
        }
    }
    WindowedDataset {
        inputs,
        targets,
        stats,
        interval_minutes,
    }
}

/// Splits the series chronologically (train earliest), then windows each
/// segment independently so train/val/test targets never overlap. Z-score
/// statistics come from the train-split input rows only.
pub fn window(
    speed: &SpeedMatrix,
    m: usize,
    h: usize,
    split_ratios: [f64; 3],
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    if m == 0 || h == 0 {
        return Err(Error::Config("window sizes M and h must be positive".into()));
    }
    let sum: f64 = split_ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || split_ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!(
            "split ratios must be nonnegative and sum to 1, got {split_ratios:?}"
        )));
    }
    let t = speed.n_timesteps();
    let mut required = m + h;
    // The train segment must yield at least one window.
    if split_ratios[0] > 0.0 {
        required = ((m + h) as f64 / split_ratios[0]).ceil() as usize;
    }
    let n_train = (t as f64 * split_ratios[0]).floor() as usize;
    let n_val = (t as f64 * split_ratios[1]).floor() as usize;
    if n_train < m + h {
        return Err(Error::InsufficientRows { required, got: t });
    }
    let values = speed.values.view();
    let train_rows = values.slice(ndarray::s![..n_train, ..]);
    let val_rows = values.slice(ndarray::s![n_train..n_train + n_val, ..]);
    let test_rows = values.slice(ndarray::s![n_train + n_val.., ..]);

    let stats = NormStats::from_values(train_rows.iter());
    let im = speed.interval_minutes;
    Ok((
        windows_to_tensors(train_rows, m, h, stats, im),
        windows_to_tensors(val_rows, m, h, stats, im),
        windows_to_tensors(test_rows, m, h, stats, im),
    ))
}
