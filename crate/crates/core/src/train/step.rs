use ndarray::{s, Array4, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datahub::WindowedDataset;
use crate::error::{Error, Result};
use crate::losses::{
    loss_ord, loss_rd_kl, loss_rd_l2, loss_scd, loss_stcd, loss_tcd, LossWeights, ResponseTriple,
};
use crate::model::{ModelGrads, ScaledLaplacian, StGcn, TapGrads};

/// Which distillation objective drives a student training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    RdL2,
    RdKl,
    Ord,
    Tcd,
    Scd,
    Stcd,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rd-l2" => Ok(LossKind::RdL2),
            "rd-kl" => Ok(LossKind::RdKl),
            "ord" => Ok(LossKind::Ord),
            "tcd" => Ok(LossKind::Tcd),
            "scd" => Ok(LossKind::Scd),
            "stcd" => Ok(LossKind::Stcd),
            other => Err(Error::Config(format!(
                "unknown loss kind `{other}` (expected rd-l2 | rd-kl | ord | tcd | scd | stcd)"
            ))),
        }
    }
}

/// Loss value and parameter gradients from one minibatch.
pub struct StepOutcome {
    pub loss: f64,
    /// `(terms routed to the teacher, total terms)` when the objective routes.
    pub routing: Option<(usize, usize)>,
    pub grads: ModelGrads,
}

/// One-step targets of a minibatch, z-scored into model space: `(B, 1, N, 1)`.
pub fn normalized_first_step_targets(data: &WindowedDataset, idx: &[usize]) -> Array4<f64> {
    let n = data.n_nodes();
    let mut t = Array4::zeros((idx.len(), 1, n, 1));
    for (k, &i) in idx.iter().enumerate() {
        for node in 0..n {
            t[[k, 0, node, 0]] = data.stats.normalize(data.targets[[i, 0, node, 0]]);
        }
    }
    t
}

pub fn select_inputs(data: &WindowedDataset, idx: &[usize]) -> Array4<f64> {
    data.inputs.select(Axis(0), idx)
}

/// Deterministically shuffled minibatch index lists for one epoch.
pub fn epoch_batches(n_samples: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n_samples).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Plain target regression: mean per-node absolute error in normalised units.
pub fn regression_step(
    model: &StGcn,
    lap: &ScaledLaplacian,
    x: &Array4<f64>,
    target_norm: &Array4<f64>,
) -> Result<StepOutcome> {
    let (y, _, cache) = model.forward_train(x, lap, None)?;
    let (b, _, n, _) = y.dim();
    let scale = 1.0 / (b * n) as f64;
    let mut loss = 0.0;
    let d = Array4::from_shape_fn(y.dim(), |ix| {
        let diff = y[ix] - target_norm[ix];
        loss += scale * diff.abs();
        scale * diff.signum() * if diff == 0.0 { 0.0 } else { 1.0 }
    });
    let grads = model.backward(&d, &TapGrads::none(), &cache, lap);
    Ok(StepOutcome { loss, routing: None, grads })
}

/// One distillation step: frozen teacher forward, student forward with taps,
/// selected loss, full backward through the student.
pub fn kd_step(
    student: &StGcn,
    teacher: &StGcn,
    lap: &ScaledLaplacian,
    x: &Array4<f64>,
    target_norm: &Array4<f64>,
    kind: LossKind,
    w: &LossWeights,
) -> Result<StepOutcome> {
    let (y_t, taps_t) = teacher.forward_with_taps(x, lap)?;
    let (y_s, taps_s, cache) = student.forward_train(x, lap, None)?;
    let r = ResponseTriple::new(&y_s, &y_t, target_norm)?;

    let mut tap_grads = TapGrads::none();
    let zero_pred = || Array4::zeros(y_s.dim());
    let (loss, routing, d_y_s) = match kind {
        LossKind::RdL2 => {
            let l = loss_rd_l2(&r, w.beta)?;
            (l.value, None, l.d_y_s)
        }
        LossKind::RdKl => {
            let l = loss_rd_kl(&r, w.beta)?;
            (l.value, None, l.d_y_s)
        }
        LossKind::Ord => {
            let l = loss_ord(&r, w.alpha1)?;
            let total = r.y_s.len();
            let routed = l.routed_to_teacher.iter().filter(|&&b| b).count();
            (l.value, Some((routed, total)), l.d_y_s)
        }
        LossKind::Tcd => {
            let l = loss_tcd(&taps_s.temporal, &taps_t.temporal)?;
            tap_grads.temporal = l.d_taps.into_iter().map(Some).collect();
            (l.value, None, zero_pred())
        }
        LossKind::Scd => {
            let l = loss_scd(&taps_s.spatial, &taps_t.spatial)?;
            tap_grads.spatial = l.d_taps.into_iter().map(Some).collect();
            (l.value, None, zero_pred())
        }
        LossKind::Stcd => {
            let l = loss_stcd(&r, &taps_s, &taps_t, w)?;
            let total = r.y_s.len();
            let routed = crate::losses::ord_routing(&r.y_t, &r.target, w.alpha1)
                .iter()
                .filter(|&&b| b)
                .count();
            tap_grads.temporal = l.d_temporal.into_iter().map(Some).collect();
            tap_grads.spatial = l.d_spatial.into_iter().map(Some).collect();
            (l.value, Some((routed, total)), l.d_y_s)
        }
    };
    let grads = student.backward(&d_y_s, &tap_grads, &cache, lap);
    Ok(StepOutcome { loss, routing, grads })
}

/// Mean per-node absolute error of one-step predictions over a whole split,
/// in normalised units; the usual validation statistic.
pub fn validation_loss(
    model: &StGcn,
    lap: &ScaledLaplacian,
    data: &WindowedDataset,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("validation split is empty".into()));
    }
    let n = data.n_samples();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size.max(1)).min(n);
        let x = data.inputs.slice(s![start..end, .., .., ..]).to_owned();
        let y = model.forward(&x, lap)?;
        for (k, i) in (start..end).enumerate() {
            for node in 0..data.n_nodes() {
                let t = data.stats.normalize(data.targets[[i, 0, node, 0]]);
                total += (y[[k, 0, node, 0]] - t).abs();
                count += 1;
            }
        }
        start = end;
    }
    Ok(total / count as f64)
}
