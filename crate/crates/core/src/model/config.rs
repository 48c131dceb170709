use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel and kernel configuration of the two hidden spatio-temporal blocks
/// plus the output block. Together with the node count this fully determines
/// the trainable parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[c_in, c_mid, c_out]` of the first hidden block.
    pub block1: [usize; 3],
    /// `[c_in, c_mid, c_out]` of the second hidden block; `c_in` must equal
    /// the first block's `c_out`.
    pub block2: [usize; 3],
    /// Temporal convolution kernel length `K_t`.
    pub temporal_kernel: usize,
    /// Chebyshev polynomial order `K_s` of the spatial convolution.
    pub spatial_order: usize,
    /// Number of graph nodes `N`.
    pub n_nodes: usize,
    /// Historical timesteps `M` consumed per forward pass.
    pub input_window: usize,
    /// Dropout rate applied after each hidden block during training.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(block1: [usize; 3], block2: [usize; 3], n_nodes: usize, input_window: usize) -> Self {
        ModelConfig {
            block1,
            block2,
            temporal_kernel: 3,
            spatial_order: 3,
            n_nodes,
            input_window,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block2[0] != self.block1[2] {
            return Err(Error::Config(format!(
                "block2 input channels ({}) must equal block1 output channels ({})",
                self.block2[0], self.block1[2]
            )));
        }
        if self.block1.iter().chain(self.block2.iter()).any(|&c| c == 0) {
            return Err(Error::Config("all channel counts must be >= 1".into()));
        }
        if self.temporal_kernel == 0 || self.spatial_order == 0 {
            return Err(Error::Config("kernel sizes must be >= 1".into()));
        }
        if self.n_nodes == 0 {
            return Err(Error::Config("n_nodes must be >= 1".into()));
        }
        if self.remaining_window() < 1 {
            return Err(Error::Config(format!(
                "input window {} too short: four temporal convolutions of kernel {} leave no \
                 timestep for the output block",
                self.input_window, self.temporal_kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Timesteps left after the four hidden temporal convolutions; the output
    /// block's convolution collapses exactly this many.
    pub fn remaining_window(&self) -> isize {
        self.input_window as isize - 4 * (self.temporal_kernel as isize - 1)
    }

    /// Time lengths of the four hidden temporal-layer outputs, in tap order.
    pub fn temporal_tap_lengths(&self) -> [usize; 4] {
        let k = self.temporal_kernel - 1;
        let m = self.input_window;
        [m - k, m - 2 * k, m - 3 * k, m - 4 * k]
    }

    /// Trainable parameter count of the model this config builds.
    pub fn param_count(&self) -> usize {
        let kt = self.temporal_kernel;
        let ks = self.spatial_order;
        let n = self.n_nodes;
        let tconv = |cin: usize, cout: usize, k: usize| k * cin * 2 * cout + 2 * cout;
        let block = |c: [usize; 3]| {
            tconv(c[0], c[1], kt) + ks * c[1] * c[1] + tconv(c[1], c[2], kt) + 2 * n * c[2]
        };
        let c_out = self.block2[2];
        let t_rem = self.remaining_window().max(1) as usize;
        block(self.block1)
            + block(self.block2)
            + tconv(c_out, c_out, t_rem)
            + 2 * n * c_out
            + c_out
            + n
    }
}
