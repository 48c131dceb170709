//! Distillation objectives: response-based losses on the predictions and
//! correlation losses on the hidden-layer taps, plus their composition. Every
//! loss returns analytic gradients alongside its value.

mod feature;
mod response;

pub use feature::{loss_scd, loss_tcd, FeatureLoss};
pub use response::{loss_ord, loss_rd_kl, loss_rd_l2, ord_routing, OrdLoss, ResponseLoss, ResponseTriple};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureTaps;

/// Mixing coefficients of the distillation objectives.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// Teacher-versus-target mixing of the plain response losses.
    pub beta: f64,
    /// Routing threshold on the normalised teacher error.
    pub alpha1: f64,
    /// Spatial-versus-temporal mixing of the hidden-layer losses.
    pub alpha2: f64,
    /// Weight of the hidden-layer losses against the response loss.
    pub alpha3: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !self.alpha3.is_finite() || self.alpha3 < 0.0 {
            return Err(Error::Config(format!(
                "alpha3 must be a nonnegative finite number, got {}",
                self.alpha3
            )));
        }
        Ok(())
    }
}

/// The composite spatio-temporal distillation loss with gradients for the
/// student prediction and every student tap.
#[derive(Debug, Clone)]
pub struct StcdLoss {
    pub value: f64,
    pub ord: f64,
    pub tcd: f64,
    pub scd: f64,
    pub teacher_ratio: f64,
    pub d_y_s: Array4<f64>,
    pub d_temporal: Vec<Array4<f64>>,
    pub d_spatial: Vec<Array4<f64>>,
}

/// `L_STCD = L_ORD + alpha3 (alpha2 L_SCD + (1 - alpha2) L_TCD)`.
pub fn loss_stcd(
    r: &ResponseTriple,
    taps_s: &FeatureTaps,
    taps_t: &FeatureTaps,
    w: &LossWeights,
) -> Result<StcdLoss> {
    w.validate()?;
    let ord = loss_ord(r, w.alpha1)?;
    let tcd = loss_tcd(&taps_s.temporal, &taps_t.temporal)?;
    let scd = loss_scd(&taps_s.spatial, &taps_t.spatial)?;
    let value = ord.value + w.alpha3 * (w.alpha2 * scd.value + (1.0 - w.alpha2) * tcd.value);
    let t_scale = w.alpha3 * (1.0 - w.alpha2);
    let s_scale = w.alpha3 * w.alpha2;
    Ok(StcdLoss {
        value,
        ord: ord.value,
        tcd: tcd.value,
        scd: scd.value,
        teacher_ratio: ord.teacher_ratio,
        d_y_s: ord.d_y_s,
        d_temporal: tcd.d_taps.into_iter().map(|g| g * t_scale).collect(),
        d_spatial: scd.d_taps.into_iter().map(|g| g * s_scale).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_taps(rng: &mut ChaCha8Rng, chans: &[usize]) -> FeatureTaps {
        let gen = |rng: &mut ChaCha8Rng, t: usize, c: usize| {
            Array4::from_shape_simple_fn((2, t, 3, c), || rng.gen_range(-1.0..1.0))
        };
        FeatureTaps {
            temporal: vec![
                gen(rng, 5, chans[0]),
                gen(rng, 4, chans[1]),
                gen(rng, 3, chans[2]),
                gen(rng, 2, chans[3]),
            ],
            spatial: vec![gen(rng, 5, chans[0]), gen(rng, 3, chans[2])],
        }
    }

    fn random_triple(rng: &mut ChaCha8Rng) -> ResponseTriple {
        let mut gen = || Array4::from_shape_simple_fn((2, 1, 3, 1), || rng.gen_range(-1.0..1.0));
        let (a, b, c) = (gen(), gen(), gen());
        ResponseTriple::new(&a, &b, &c).unwrap()
    }

    #[test]
    fn composition_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let r = random_triple(&mut rng);
        let s = random_taps(&mut rng, &[2, 3, 2, 4]);
        let t = random_taps(&mut rng, &[4, 6, 4, 8]);
        let base = LossWeights { beta: 0.5, alpha1: 0.4, alpha2: 0.3, alpha3: 0.0 };
        let at0 = loss_stcd(&r, &s, &t, &base).unwrap();
        assert!((at0.value - loss_ord(&r, 0.4).unwrap().value).abs() < 1e-12);

        let full = LossWeights { beta: 0.5, alpha1: 0.4, alpha2: 1.0, alpha3: 1.0 };
        let at1 = loss_stcd(&r, &s, &t, &full).unwrap();
        let expected = loss_ord(&r, 0.4).unwrap().value
            + loss_scd(&s.spatial, &t.spatial).unwrap().value;
        assert!((at1.value - expected).abs() < 1e-12);
    }

    #[test]
    fn self_distillation_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let y = Array4::from_shape_simple_fn((2, 1, 3, 1), || rng.gen_range(-1.0..1.0));
        let r = ResponseTriple::new(&y, &y, &y).unwrap();
        let taps = random_taps(&mut rng, &[2, 3, 2, 4]);
        let w = LossWeights { beta: 0.5, alpha1: 0.3, alpha2: 0.5, alpha3: 2.0 };
        let loss = loss_stcd(&r, &taps, &taps.clone(), &w).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.d_y_s.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn node_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let r = random_triple(&mut rng);
        let s = random_taps(&mut rng, &[2, 3, 2, 4]);
        let t = random_taps(&mut rng, &[4, 6, 4, 8]);
        let w = LossWeights { beta: 0.4, alpha1: 0.5, alpha2: 0.6, alpha3: 1.5 };
        let base = loss_stcd(&r, &s, &t, &w).unwrap();

        let perm = [2usize, 0, 1];
        let permute4 = |a: &Array4<f64>| {
            let (b, tt, n, c) = a.dim();
            Array4::from_shape_fn((b, tt, n, c), |(bb, ti, ni, ci)| a[[bb, ti, perm[ni], ci]])
        };
        let permute2 = |a: &ndarray::Array2<f64>| {
            let (b, n) = a.dim();
            ndarray::Array2::from_shape_fn((b, n), |(bb, ni)| a[[bb, perm[ni]]])
        };
        let rp = ResponseTriple {
            y_s: permute2(&r.y_s),
            y_t: permute2(&r.y_t),
            target: permute2(&r.target),
        };
        let sp = FeatureTaps {
            temporal: s.temporal.iter().map(&permute4).collect(),
            spatial: s.spatial.iter().map(&permute4).collect(),
        };
        let tp = FeatureTaps {
            temporal: t.temporal.iter().map(&permute4).collect(),
            spatial: t.spatial.iter().map(&permute4).collect(),
        };
        let permuted = loss_stcd(&rp, &sp, &tp, &w).unwrap();
        assert!((base.value - permuted.value).abs() < 1e-12);
        assert!((base.teacher_ratio - permuted.teacher_ratio).abs() < 1e-12);
    }

    #[test]
    fn invalid_weights_rejected() {
        let w = LossWeights { beta: 0.5, alpha1: 1.5, alpha2: 0.5, alpha3: 1.0 };
        assert!(w.validate().is_err());
        let w = LossWeights { beta: 0.5, alpha1: 0.5, alpha2: 0.5, alpha3: -1.0 };
        assert!(w.validate().is_err());
    }

    #[test]
    fn tap_gradients_scaled_by_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let r = random_triple(&mut rng);
        let s = random_taps(&mut rng, &[2, 3, 2, 4]);
        let t = random_taps(&mut rng, &[4, 6, 4, 8]);
        let w = LossWeights { beta: 0.5, alpha1: 0.4, alpha2: 0.25, alpha3: 2.0 };
        let loss = loss_stcd(&r, &s, &t, &w).unwrap();
        let raw_tcd = loss_tcd(&s.temporal, &t.temporal).unwrap();
        let raw_scd = loss_scd(&s.spatial, &t.spatial).unwrap();
        for (scaled, raw) in loss.d_temporal.iter().zip(raw_tcd.d_taps.iter()) {
            let diff = scaled - &(raw * (2.0 * 0.75));
            assert!(diff.iter().all(|d| d.abs() < 1e-12));
        }
        for (scaled, raw) in loss.d_spatial.iter().zip(raw_scd.d_taps.iter()) {
            let diff = scaled - &(raw * (2.0 * 0.25));
            assert!(diff.iter().all(|d| d.abs() < 1e-12));
        }
    }
}
