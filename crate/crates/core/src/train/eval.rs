use ndarray::{s, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::datahub::{NormStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{ScaledLaplacian, StGcn};

/// Entries with |truth| below this are excluded from the percentage error to
/// keep missing-speed zeros from blowing it up.
pub const MAPE_EPSILON: f64 = 1e-3;

/// Error statistics at one forecasting horizon; `mape` is absent when no
/// entry had |truth| above [`MAPE_EPSILON`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    pub mape: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// `(steps ahead, minutes ahead, metrics)` per evaluated horizon.
    pub horizons: Vec<(usize, u32, Metrics)>,
}

impl HorizonMetrics {
    pub fn at_step(&self, step: usize) -> Option<&Metrics> {
        self.horizons.iter().find(|(s, _, _)| *s == step).map(|(_, _, m)| m)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("steps,minutes,mape,mae,rmse\n");
        for (steps, minutes, m) in &self.horizons {
            let mape = m.mape.map(|v| format!("{v}")).unwrap_or_default();
            out.push_str(&format!("{steps},{minutes},{mape},{},{}\n", m.mae, m.rmse));
        }
        out
    }
}

/// Rolls the one-step model forward `h` times: each prediction is appended to
/// the input window (oldest timestep dropped) before the next pass. The
/// window is in normalised units; the returned `(h, N, 1)` predictions are
/// denormalised.
pub fn predict_sequence(
    model: &StGcn,
    lap: &ScaledLaplacian,
    window: &Array3<f64>,
    h: usize,
    stats: &NormStats,
) -> Result<Array3<f64>> {
    if h == 0 {
        return Err(Error::Config("prediction horizon must be at least 1".into()));
    }
    let (m, n, c) = window.dim();
    let mut x = Array4::zeros((1, m, n, c));
    x.slice_mut(s![0, .., .., ..]).assign(window);
    let mut out = Array3::zeros((h, n, 1));
    for step in 0..h {
        let y = model.forward(&x, lap)?;
        for node in 0..n {
            let z = y[[0, 0, node, 0]];
            out[[step, node, 0]] = stats.denormalize(z);
        }
        // Shift the window left and append the prediction.
        let shifted = x.slice(s![.., 1.., .., ..]).to_owned();
        x.slice_mut(s![.., ..m - 1, .., ..]).assign(&shifted);
        for node in 0..n {
            x[[0, m - 1, node, 0]] = y[[0, 0, node, 0]];
        }
    }
    Ok(out)
}

/// Metrics between flat prediction/truth slices, both in original units.
pub fn horizon_metrics(pred: &[f64], truth: &[f64]) -> Metrics {
    assert_eq!(pred.len(), truth.len());
    let n = pred.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_count = 0usize;
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        let e = p - t;
        abs_sum += e.abs();
        sq_sum += e * e;
        if t.abs() > MAPE_EPSILON {
            pct_sum += (e / t).abs();
            pct_count += 1;
        }
    }
    Metrics {
        mape: (pct_count > 0).then(|| pct_sum / pct_count as f64 * 100.0),
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
    }
}

/// Horizons (in steps) evaluated by default: 15, 30 and 45 minutes at
/// 5-minute data.
pub const DEFAULT_EVAL_STEPS: [usize; 3] = [3, 6, 9];

/// Sequential multi-horizon evaluation over a test split, reporting metrics
/// at the default step horizons that fit within the dataset's target length.
pub fn evaluate(model: &StGcn, lap: &ScaledLaplacian, test: &WindowedDataset) -> Result<HorizonMetrics> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test split is empty".into()));
    }
    let h = test.horizon();
    let steps: Vec<usize> = DEFAULT_EVAL_STEPS.iter().copied().filter(|&s| s <= h).collect();
    if steps.is_empty() {
        return Err(Error::Validation(format!(
            "target horizon {h} is shorter than the shortest evaluation step \
             ({})",
            DEFAULT_EVAL_STEPS[0]
        )));
    }
    let n = test.n_nodes();
    let samples = test.n_samples();
    let mut preds: Vec<Vec<f64>> = vec![Vec::with_capacity(samples * n); steps.len()];
    let mut truths: Vec<Vec<f64>> = vec![Vec::with_capacity(samples * n); steps.len()];
    for i in 0..samples {
        let window = test.inputs.slice(s![i, .., .., ..]).to_owned();
        let rollout = predict_sequence(model, lap, &window, h, &test.stats)?;
        for (k, &step) in steps.iter().enumerate() {
            for node in 0..n {
                preds[k].push(rollout[[step - 1, node, 0]]);
                truths[k].push(test.targets[[i, step - 1, node, 0]]);
            }
        }
    }
    let horizons = steps
        .iter()
        .enumerate()
        .map(|(k, &step)| {
            let minutes = step as u32 * test.interval_minutes;
            (step, minutes, horizon_metrics(&preds[k], &truths[k]))
        })
        .collect();
    Ok(HorizonMetrics { horizons })
}
