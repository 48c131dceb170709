use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::model::{MaskSet, ModelGrads, StGcn};

/// Adaptive moment estimation with the customary defaults.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(model: &StGcn, lr: f64) -> Self {
        let zeros: Vec<ArrayD<f64>> = model
            .tensors()
            .iter()
            .map(|(_, t)| ArrayD::zeros(t.shape()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update step. When masks are supplied the masked weights are
    /// re-zeroed afterwards, keeping pruning persistent across fine-tuning.
    pub fn step(
        &mut self,
        model: &mut StGcn,
        grads: &ModelGrads,
        masks: Option<&MaskSet>,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        {
            let mut tensors = model.tensors_mut();
            let grad_tensors = grads.tensors();
            if tensors.len() != grad_tensors.len() {
                return Err(Error::Shape("gradient/parameter tensor count mismatch".into()));
            }
            for (ti, ((name, tensor), (gname, grad))) in
                tensors.iter_mut().zip(grad_tensors.iter()).enumerate()
            {
                if name != gname || tensor.shape() != grad.shape() {
                    return Err(Error::Shape(format!(
                        "gradient tensor {gname} does not match parameter {name}"
                    )));
                }
                let m = &mut self.m[ti];
                let v = &mut self.v[ti];
                for ((w, &g), (m_i, v_i)) in tensor
                    .iter_mut()
                    .zip(grad.iter())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *m_i = self.beta1 * *m_i + (1.0 - self.beta1) * g;
                    *v_i = self.beta2 * *v_i + (1.0 - self.beta2) * g * g;
                    let m_hat = *m_i / bc1;
                    let v_hat = *v_i / bc2;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        if let Some(masks) = masks {
            masks.apply(model)?;
        }
        Ok(())
    }
}

/// Step-decay schedule: the rate is multiplied by `decay` every `every`
/// epochs, i.e. `lr(epoch) = lr0 * decay^(epoch / every)` with zero-based
/// epochs and integer division.
pub fn lr_at(lr0: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    lr0 * decay.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::datahub::WeightedAdjacency;
    use crate::model::{build_model, scaled_laplacian, ModelConfig, TapGrads};

    #[test]
    fn lr_schedule_steps_every_five_epochs() {
        for epoch in 0..5 {
            assert_eq!(lr_at(1e-3, 0.7, 5, epoch), 1e-3);
        }
        assert!((lr_at(1e-3, 0.7, 5, 5) - 0.7e-3).abs() < 1e-18);
        assert!((lr_at(1e-3, 0.7, 5, 11) - 0.49e-3).abs() < 1e-18);
    }

    #[test]
    fn masked_weights_stay_zero_across_steps() {
        let mut cfg = ModelConfig::new([1, 2, 3], [3, 2, 4], 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        let mut model = build_model(&cfg, 31).unwrap();
        let mut masks = MaskSet::ones(&model);
        {
            let m = masks.get_mut("block1.t1.w").unwrap().as_slice_mut().unwrap();
            m[0] = 0.0;
            m[2] = 0.0;
        }
        masks.apply(&mut model).unwrap();

        let mut w = ndarray::Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    w[[i, j]] = 1.0;
                }
            }
        }
        let lap = scaled_laplacian(&WeightedAdjacency { w, sigma_sq: 1.0, epsilon: 0.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = Array4::from_shape_simple_fn((3, 6, 4, 1), || rng.gen_range(-1.0..1.0));
        let target = Array4::from_shape_simple_fn((3, 1, 4, 1), || rng.gen_range(-1.0..1.0));

        let mut opt = Adam::new(&model, 1e-2);
        for _ in 0..3 {
            let (y, _, cache) = model.forward_train(&x, &lap, None).unwrap();
            let d = (&y - &target).mapv(|v| 2.0 * v);
            let grads = model.backward(&d, &TapGrads::none(), &cache, &lap);
            opt.step(&mut model, &grads, Some(&masks)).unwrap();
        }
        let tensors = model.tensors();
        let (_, t) = tensors.iter().find(|(n, _)| *n == "block1.t1.w").unwrap();
        let vals: Vec<f64> = t.iter().copied().collect();
        assert_eq!(vals[0], 0.0);
        assert_eq!(vals[2], 0.0);
        assert!(vals[1] != 0.0);
    }

    #[test]
    fn adam_reduces_a_simple_regression_loss() {
        let mut cfg = ModelConfig::new([1, 2, 3], [3, 2, 4], 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        let mut model = build_model(&cfg, 33).unwrap();
        let mut w = ndarray::Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    w[[i, j]] = 0.5;
                }
            }
        }
        let lap = scaled_laplacian(&WeightedAdjacency { w, sigma_sq: 1.0, epsilon: 0.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let x = Array4::from_shape_simple_fn((4, 6, 4, 1), || rng.gen_range(-1.0..1.0));
        let target = Array4::from_shape_simple_fn((4, 1, 4, 1), || rng.gen_range(-1.0..1.0));
        let loss = |m: &StGcn| {
            let y = m.forward(&x, &lap).unwrap();
            (&y - &target).mapv(|v| v * v).mean().unwrap()
        };
        let before = loss(&model);
        let mut opt = Adam::new(&model, 1e-2);
        for _ in 0..50 {
            let (y, _, cache) = model.forward_train(&x, &lap, None).unwrap();
            let d = (&y - &target).mapv(|v| 2.0 * v / (4.0 * 4.0));
            let grads = model.backward(&d, &TapGrads::none(), &cache, &lap);
            opt.step(&mut model, &grads, None).unwrap();
        }
        assert!(loss(&model) < before * 0.5);
    }
}
