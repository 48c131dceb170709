use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::datahub::NormStats;
use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::mask::MaskSet;
use super::stgcn::{build_model, StGcn};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialisable snapshot of a model: config, weights in canonical tensor
/// order, the normalisation statistics it was trained with, and any pruning
/// masks in force.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub stats: NormStats,
    pub weights: Vec<(String, ArrayD<f64>)>,
    pub masks: Option<MaskSet>,
}

impl Checkpoint {
    pub fn capture(model: &StGcn, stats: &NormStats, masks: Option<&MaskSet>) -> Self {
        let weights = model
            .tensors()
            .into_iter()
            .map(|(name, t)| (name.to_string(), t.to_owned()))
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            stats: stats.clone(),
            weights,
            masks: masks.cloned(),
        }
    }

    /// Rebuilds the model and loads the stored weights into it. Masks, when
    /// present, are re-applied so pruned weights stay zero.
    pub fn restore(&self) -> Result<StGcn> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = build_model(&self.config, 0)?;
        {
            let mut tensors = model.tensors_mut();
            if tensors.len() != self.weights.len() {
                return Err(Error::Validation(format!(
                    "checkpoint holds {} tensors, model expects {}",
                    self.weights.len(),
                    tensors.len()
                )));
            }
            for ((name, tensor), (stored_name, stored)) in
                tensors.iter_mut().zip(self.weights.iter())
            {
                if *name != stored_name {
                    return Err(Error::Validation(format!(
                        "checkpoint tensor order mismatch: expected {name}, found {stored_name}"
                    )));
                }
                if tensor.shape() != stored.shape() {
                    return Err(Error::Validation(format!(
                        "checkpoint tensor {name}: shape {:?} does not match model {:?}",
                        stored.shape(),
                        tensor.shape()
                    )));
                }
                tensor.assign(stored);
            }
        }
        if let Some(masks) = &self.masks {
            masks.apply(&mut model)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::datahub::WeightedAdjacency;
    use crate::model::scaled_laplacian;

    #[test]
    fn round_trip_preserves_forward_pass() {
        let mut cfg = ModelConfig::new([1, 2, 3], [3, 2, 4], 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        let model = build_model(&cfg, 21).unwrap();
        let stats = NormStats { mean: 55.0, std: 8.0 };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::capture(&model, &stats, None).save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap();
        assert_eq!(restored.stats.mean, 55.0);
        let model2 = restored.restore().unwrap();

        let mut w = ndarray::Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    w[[i, j]] = 1.0;
                }
            }
        }
        let lap = scaled_laplacian(&WeightedAdjacency { w, sigma_sq: 1.0, epsilon: 0.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Array4::from_shape_simple_fn((2, 6, 4, 1), || rng.gen_range(-1.0..1.0));
        assert_eq!(
            model.forward(&x, &lap).unwrap(),
            model2.forward(&x, &lap).unwrap()
        );
    }

    #[test]
    fn masks_reapplied_on_restore() {
        let mut cfg = ModelConfig::new([1, 2, 3], [3, 2, 4], 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        let mut model = build_model(&cfg, 23).unwrap();
        let mut masks = MaskSet::ones(&model);
        masks
            .get_mut("block2.t1.w")
            .unwrap()
            .as_slice_mut()
            .unwrap()[1] = 0.0;
        masks.apply(&mut model).unwrap();

        let stats = NormStats { mean: 0.0, std: 1.0 };
        let ckpt = Checkpoint::capture(&model, &stats, Some(&masks));
        let restored = ckpt.restore().unwrap();
        let tensors = restored.tensors();
        let (_, t) = tensors.iter().find(|(n, _)| *n == "block2.t1.w").unwrap();
        assert_eq!(t.iter().copied().nth(1), Some(0.0));
    }

    #[test]
    fn missing_file_reports_missing_artifact() {
        let err = Checkpoint::load(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }
}
