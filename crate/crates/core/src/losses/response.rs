use ndarray::{Array2, Array4, Axis};

use crate::error::{Error, Result};

/// Student predictions, teacher predictions and ground truth for one batch,
/// all in the same (normalised) units. Stored as `(batch, node)`.
#[derive(Debug, Clone)]
pub struct ResponseTriple {
    pub y_s: Array2<f64>,
    pub y_t: Array2<f64>,
    pub target: Array2<f64>,
}

/// A response loss value together with its gradient with respect to the
/// student prediction, shaped like the model output `(B, 1, N, 1)`.
#[derive(Debug, Clone)]
pub struct ResponseLoss {
    pub value: f64,
    pub d_y_s: Array4<f64>,
}

/// [`ResponseLoss`] plus the routing diagnostics of the outlier-routed loss.
#[derive(Debug, Clone)]
pub struct OrdLoss {
    pub value: f64,
    pub d_y_s: Array4<f64>,
    /// Fraction of `(batch, node)` terms that followed the teacher.
    pub teacher_ratio: f64,
    pub routed_to_teacher: Array2<bool>,
}

fn squeeze(y: &Array4<f64>) -> Result<Array2<f64>> {
    let (b, t, n, c) = y.dim();
    if t != 1 || c != 1 {
        return Err(Error::Shape(format!(
            "response tensors must be (B, 1, N, 1), got ({b}, {t}, {n}, {c})"
        )));
    }
    Ok(y.to_owned().into_shape((b, n)).unwrap())
}

fn unsqueeze(g: Array2<f64>) -> Array4<f64> {
    let (b, n) = g.dim();
    g.into_shape((b, 1, n, 1)).unwrap()
}

impl ResponseTriple {
    pub fn new(y_s: &Array4<f64>, y_t: &Array4<f64>, target: &Array4<f64>) -> Result<Self> {
        let triple = ResponseTriple {
            y_s: squeeze(y_s)?,
            y_t: squeeze(y_t)?,
            target: squeeze(target)?,
        };
        if triple.y_s.dim() != triple.y_t.dim() || triple.y_s.dim() != triple.target.dim() {
            return Err(Error::Shape(format!(
                "response tensors disagree: student {:?}, teacher {:?}, target {:?}",
                triple.y_s.dim(),
                triple.y_t.dim(),
                triple.target.dim()
            )));
        }
        if triple.y_s.is_empty() {
            return Err(Error::EmptyInput("response batch is empty".into()));
        }
        Ok(triple)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Response distillation mixing teacher and target regression terms:
/// mean over batch and nodes of `beta |y_s - y_t| + (1 - beta) |y_s - T|`.
pub fn loss_rd_l2(r: &ResponseTriple, beta: f64) -> Result<ResponseLoss> {
    check_unit("beta", beta)?;
    let (b, n) = r.y_s.dim();
    let scale = 1.0 / (b * n) as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros((b, n));
    for bb in 0..b {
        for i in 0..n {
            let dt = r.y_s[[bb, i]] - r.y_t[[bb, i]];
            let dg = r.y_s[[bb, i]] - r.target[[bb, i]];
            value += scale * (beta * dt.abs() + (1.0 - beta) * dg.abs());
            grad[[bb, i]] = scale * (beta * sgn(dt) + (1.0 - beta) * sgn(dg));
        }
    }
    Ok(ResponseLoss { value, d_y_s: unsqueeze(grad) })
}

/// Softmax over the node axis of each batch row.
fn node_softmax(y: &Array2<f64>) -> Array2<f64> {
    let mut p = y.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Response distillation with a distributional teacher term. Predictions are
/// turned into distributions over nodes via softmax per batch element; the
/// teacher-student divergence `sum_i q_i ln(q_i / p_i)` is mixed with the
/// node-mean absolute regression error and averaged over the batch.
pub fn loss_rd_kl(r: &ResponseTriple, beta: f64) -> Result<ResponseLoss> {
    check_unit("beta", beta)?;
    let (b, n) = r.y_s.dim();
    let p = node_softmax(&r.y_s);
    let q = node_softmax(&r.y_t);
    let mut value = 0.0;
    let mut grad = Array2::zeros((b, n));
    for bb in 0..b {
        let mut kl = 0.0;
        for i in 0..n {
            kl += q[[bb, i]] * (q[[bb, i]] / p[[bb, i]]).ln();
        }
        let mut reg = 0.0;
        for i in 0..n {
            let dg = r.y_s[[bb, i]] - r.target[[bb, i]];
            reg += dg.abs() / n as f64;
            grad[[bb, i]] = (beta * (p[[bb, i]] - q[[bb, i]])
                + (1.0 - beta) * sgn(dg) / n as f64)
                / b as f64;
        }
        value += (beta * kl + (1.0 - beta) * reg) / b as f64;
    }
    Ok(ResponseLoss { value, d_y_s: unsqueeze(grad) })
}

/// Per-(batch, node) routing decision of the outlier-routed loss: `true`
/// where the min-max-normalised teacher error exceeds `alpha1`, i.e. where
/// the student should follow the teacher instead of the noisy target. The
/// decision depends only on the teacher and the target.
pub fn ord_routing(y_t: &Array2<f64>, target: &Array2<f64>, alpha1: f64) -> Array2<bool> {
    let (b, n) = y_t.dim();
    let mut routed = Array2::from_elem((b, n), false);
    for bb in 0..b {
        let d: Vec<f64> = (0..n).map(|i| (y_t[[bb, i]] - target[[bb, i]]).abs()).collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max - min <= 0.0 {
            continue; // degenerate row: all errors equal, keep the target
        }
        for i in 0..n {
            let norm = (d[i] - min) / (max - min);
            routed[[bb, i]] = norm > alpha1;
        }
    }
    routed
}

/// Outlier-routed response distillation: nodes where even the teacher misses
/// the target badly (normalised error above `alpha1`) regress onto the
/// teacher's smoother prediction; the rest regress onto the target.
pub fn loss_ord(r: &ResponseTriple, alpha1: f64) -> Result<OrdLoss> {
    check_unit("alpha1", alpha1)?;
    let (b, n) = r.y_s.dim();
    let routed = ord_routing(&r.y_t, &r.target, alpha1);
    let scale = 1.0 / (b * n) as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros((b, n));
    let mut teacher_terms = 0usize;
    for bb in 0..b {
        for i in 0..n {
            let reference = if routed[[bb, i]] {
                teacher_terms += 1;
                r.y_t[[bb, i]]
            } else {
                r.target[[bb, i]]
            };
            let d = r.y_s[[bb, i]] - reference;
            value += scale * d.abs();
            grad[[bb, i]] = scale * sgn(d);
        }
    }
    Ok(OrdLoss {
        value,
        d_y_s: unsqueeze(grad),
        teacher_ratio: teacher_terms as f64 / (b * n) as f64,
        routed_to_teacher: routed,
    })
}
