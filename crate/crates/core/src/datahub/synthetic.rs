use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{build_adjacency, SpeedMatrix, WeightedAdjacency};

/// One sinusoidal component of the synthetic speed signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    /// Period in timesteps.
    pub period: f64,
}

/// Deterministic desk-scale dataset: sinusoid-plus-noise speeds on randomly
/// placed stations with optional spatial coupling through the adjacency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_timesteps: usize,
    pub seed: u64,
    pub waves: Vec<Wave>,
    pub noise_std: f64,
    /// Mix-in weight of the neighbour average, in `[0, 1]`.
    pub coupling: f64,
    pub base_speed: f64,
    pub interval_minutes: u32,
    /// Kernel threshold for the generated adjacency.
    pub epsilon: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_nodes: 10,
            n_timesteps: 600,
            seed: 7,
            waves: vec![
                Wave { amplitude: 10.0, period: 144.0 },
                Wave { amplitude: 4.0, period: 36.0 },
            ],
            noise_std: 1.0,
            coupling: 0.3,
            base_speed: 60.0,
            interval_minutes: 5,
            epsilon: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_timesteps == 0 {
            return Err(Error::Config("n_nodes and n_timesteps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::Config(format!(
                "coupling must lie in [0,1], got {}",
                self.coupling
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        if self.waves.iter().any(|w| w.period <= 0.0) {
            return Err(Error::Config("wave periods must be positive".into()));
        }
        Ok(())
    }
}

/// Generates speeds and a matching weighted adjacency, reproducibly per seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(SpeedMatrix, WeightedAdjacency)> {
    spec.validate()?;
    let n = spec.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Station layout on the unit square; distances feed the Gaussian kernel.
    let positions: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let mut distances = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (xi, yi) = positions[i];
            let (xj, yj) = positions[j];
            distances[[i, j]] = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
        }
    }
    let adjacency = build_adjacency(&distances, None, spec.epsilon)?;

    // Row-normalised adjacency for the neighbour-average mixing step.
    let mut w_norm = adjacency.w.clone();
    for mut row in w_norm.rows_mut() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }

    let phases: Vec<f64> = (0..n)
        .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
        .collect();

    let mut base = Array2::zeros((spec.n_timesteps, n));
    for t in 0..spec.n_timesteps {
        for node in 0..n {
            let mut v = spec.base_speed;
            for wave in &spec.waves {
                v += wave.amplitude
                    * (std::f64::consts::TAU * t as f64 / wave.period + phases[node]).sin();
            }
            base[[t, node]] = v;
        }
    }

    let mut values = base.clone();
    if spec.coupling > 0.0 {
        for t in 0..spec.n_timesteps {
            for node in 0..n {
                let neighbour: f64 = (0..n).map(|j| w_norm[[node, j]] * base[[t, j]]).sum();
                values[[t, node]] =
                    (1.0 - spec.coupling) * base[[t, node]] + spec.coupling * neighbour;
            }
        }
    }
    if spec.noise_std > 0.0 {
        use rand_distr::Distribution;
        let normal = rand_distr::Normal::new(0.0, spec.noise_std)
            .map_err(|e| Error::Config(e.to_string()))?;
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    Ok((SpeedMatrix::new(values, spec.interval_minutes)?, adjacency))
}
