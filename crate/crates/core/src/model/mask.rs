use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::stgcn::{StGcn, HIDDEN_WEIGHT_NAMES};

/// Binary keep-masks over the six hidden-block weight tensors. A zero entry
/// pins the corresponding weight to zero; biases, normalisation affines and
/// the output block are never masked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSet {
    pub masks: Vec<(String, ArrayD<f64>)>,
}

impl MaskSet {
    /// All-ones masks matching the model's hidden weight tensors.
    pub fn ones(model: &StGcn) -> Self {
        let masks = model
            .tensors()
            .into_iter()
            .filter(|(name, _)| HIDDEN_WEIGHT_NAMES.contains(name))
            .map(|(name, t)| (name.to_string(), ArrayD::ones(t.shape())))
            .collect();
        MaskSet { masks }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.masks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.masks.iter_mut().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Number of maskable weights.
    pub fn total(&self) -> usize {
        self.masks.iter().map(|(_, m)| m.len()).sum()
    }

    /// Number of weights still active.
    pub fn kept(&self) -> usize {
        self.masks
            .iter()
            .map(|(_, m)| m.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }

    pub fn pruned(&self) -> usize {
        self.total() - self.kept()
    }

    /// Verifies shapes against the model and zeroes the masked weights.
    pub fn apply(&self, model: &mut StGcn) -> Result<()> {
        for (name, tensor) in model.tensors_mut() {
            if let Some(mask) = self.get(name) {
                if mask.shape() != tensor.shape() {
                    return Err(Error::MaskShape {
                        tensor: name.to_string(),
                        expected: tensor.shape().to_vec(),
                        got: mask.shape().to_vec(),
                    });
                }
            }
        }
        let mut model_tensors = model.tensors_mut();
        for (name, tensor) in model_tensors.iter_mut() {
            if let Some(mask) = self.get(name) {
                for (w, m) in tensor.iter_mut().zip(mask.iter()) {
                    *w *= m;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    fn toy_model() -> StGcn {
        let mut cfg = ModelConfig::new([1, 2, 3], [3, 2, 4], 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        build_model(&cfg, 7).unwrap()
    }

    #[test]
    fn ones_mask_covers_exactly_hidden_weights() {
        let model = toy_model();
        let set = MaskSet::ones(&model);
        let names: Vec<&str> = set.masks.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, HIDDEN_WEIGHT_NAMES.to_vec());
        assert_eq!(set.kept(), set.total());
        assert_eq!(set.pruned(), 0);
    }

    #[test]
    fn apply_zeroes_masked_weights_only() {
        let mut model = toy_model();
        let mut set = MaskSet::ones(&model);
        let mask = set.get_mut("block1.spatial.w").unwrap();
        let flat = mask.as_slice_mut().unwrap();
        flat[0] = 0.0;
        flat[3] = 0.0;
        set.apply(&mut model).unwrap();
        let tensors = model.tensors();
        let (_, sp) = tensors
            .iter()
            .find(|(n, _)| *n == "block1.spatial.w")
            .unwrap();
        let vals: Vec<f64> = sp.iter().copied().collect();
        assert_eq!(vals[0], 0.0);
        assert_eq!(vals[3], 0.0);
        assert!(vals[1] != 0.0 && vals[2] != 0.0);
        assert_eq!(set.pruned(), 2);
    }

    #[test]
    fn wrong_shape_rejected() {
        let mut model = toy_model();
        let mut set = MaskSet::ones(&model);
        set.masks[0].1 = ArrayD::ones(ndarray::IxDyn(&[1, 1, 1]));
        assert!(matches!(
            set.apply(&mut model),
            Err(Error::MaskShape { .. })
        ));
    }
}
