use ndarray::Array4;

use crate::error::{Error, Result};

/// A feature-correlation loss value with gradients for each student tap, in
/// the same order the taps were supplied.
#[derive(Debug, Clone)]
pub struct FeatureLoss {
    pub value: f64,
    pub d_taps: Vec<Array4<f64>>,
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

fn check_pairs(taps_s: &[Array4<f64>], taps_t: &[Array4<f64>], kind: &str) -> Result<()> {
    if taps_s.len() != taps_t.len() || taps_s.is_empty() {
        return Err(Error::Validation(format!(
            "{kind} tap count mismatch: student has {}, teacher has {}",
            taps_s.len(),
            taps_t.len()
        )));
    }
    for (idx, (s, t)) in taps_s.iter().zip(taps_t.iter()).enumerate() {
        let (bs, ts, ns, _) = s.dim();
        let (bt, tt, nt, _) = t.dim();
        if (bs, ts, ns) != (bt, tt, nt) {
            return Err(Error::Shape(format!(
                "{kind} tap {idx}: student (B,T,N) = ({bs},{ts},{ns}) but teacher \
                 ({bt},{tt},{nt}); channel counts may differ, the rest must match"
            )));
        }
    }
    Ok(())
}

/// Channel-averaged absolute feature difference between two indices of one
/// axis (time for TCD, node for SCD) of a `(B, T, N, C)` tensor.
fn pair_diff(f: &Array4<f64>, b: usize, t: (usize, usize), n: (usize, usize)) -> f64 {
    let c = f.dim().3;
    let mut acc = 0.0;
    for cc in 0..c {
        acc += (f[[b, t.0, n.0, cc]] - f[[b, t.1, n.1, cc]]).abs();
    }
    acc / c as f64
}

/// Temporal correlation distillation: for every node, the channel-averaged
/// absolute difference between each unordered pair of timesteps is matched
/// between student and teacher; averaged over batch, nodes, time pairs and
/// tap pairs.
pub fn loss_tcd(taps_s: &[Array4<f64>], taps_t: &[Array4<f64>]) -> Result<FeatureLoss> {
    check_pairs(taps_s, taps_t, "temporal")?;
    let pairs = taps_s.len() as f64;
    let mut value = 0.0;
    let mut d_taps = Vec::with_capacity(taps_s.len());
    for (fs, ft) in taps_s.iter().zip(taps_t.iter()) {
        let (b, t, n, cs) = fs.dim();
        if t < 2 {
            return Err(Error::Validation(format!(
                "temporal correlation needs at least 2 timesteps, tap has {t}"
            )));
        }
        let scale = 1.0 / (b as f64 * n as f64 * (t * (t - 1) / 2) as f64) / pairs;
        let mut grad = Array4::zeros(fs.dim());
        for bb in 0..b {
            for nn in 0..n {
                for i in 0..t {
                    for j in i + 1..t {
                        let ds = pair_diff(fs, bb, (i, j), (nn, nn));
                        let dt = pair_diff(ft, bb, (i, j), (nn, nn));
                        value += scale * (ds - dt).abs();
                        let outer = scale * sgn(ds - dt) / cs as f64;
                        for cc in 0..cs {
                            let inner = sgn(fs[[bb, i, nn, cc]] - fs[[bb, j, nn, cc]]);
                            grad[[bb, i, nn, cc]] += outer * inner;
                            grad[[bb, j, nn, cc]] -= outer * inner;
                        }
                    }
                }
            }
        }
        d_taps.push(grad);
    }
    Ok(FeatureLoss { value, d_taps })
}

/// Spatial correlation distillation: at every timestep, the channel-averaged
/// absolute difference between each unordered pair of nodes is matched
/// between student and teacher; averaged over batch, timesteps, node pairs
/// and tap pairs.
pub fn loss_scd(taps_s: &[Array4<f64>], taps_t: &[Array4<f64>]) -> Result<FeatureLoss> {
    check_pairs(taps_s, taps_t, "spatial")?;
    let pairs = taps_s.len() as f64;
    let mut value = 0.0;
    let mut d_taps = Vec::with_capacity(taps_s.len());
    for (fs, ft) in taps_s.iter().zip(taps_t.iter()) {
        let (b, t, n, cs) = fs.dim();
        if n < 2 {
            return Err(Error::Validation(format!(
                "spatial correlation needs at least 2 nodes, tap has {n}"
            )));
        }
        let scale = 1.0 / (b as f64 * t as f64 * (n * (n - 1) / 2) as f64) / pairs;
        let mut grad = Array4::zeros(fs.dim());
        for bb in 0..b {
            for tt in 0..t {
                for i in 0..n {
                    for j in i + 1..n {
                        let ds = pair_diff(fs, bb, (tt, tt), (i, j));
                        let dt = pair_diff(ft, bb, (tt, tt), (i, j));
                        value += scale * (ds - dt).abs();
                        let outer = scale * sgn(ds - dt) / cs as f64;
                        for cc in 0..cs {
                            let inner = sgn(fs[[bb, tt, i, cc]] - fs[[bb, tt, j, cc]]);
                            grad[[bb, tt, i, cc]] += outer * inner;
                            grad[[bb, tt, j, cc]] -= outer * inner;
                        }
                    }
                }
            }
        }
        d_taps.push(grad);
    }
    Ok(FeatureLoss { value, d_taps })
}
