use std::time::Instant;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{flops_for_batch, ScaledLaplacian, StGcn};

/// Wall-clock inference profile of one model at a fixed batch size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub mean_seconds: f64,
    pub runs: usize,
    pub batch: usize,
    pub flops: f64,
    pub param_count: usize,
}

impl BenchReport {
    /// Effective throughput in floating-point operations per second.
    pub fn flops_per_second(&self) -> f64 {
        self.flops / self.mean_seconds
    }
}

pub const BENCH_WARMUP: usize = 10;

/// Times `runs` forward passes over a fixed random batch, after
/// [`BENCH_WARMUP`] untimed passes. The batch is processed in chunks of
/// `chunk` samples so large profiling batches stay within memory.
pub fn benchmark(
    model: &StGcn,
    lap: &ScaledLaplacian,
    batch: usize,
    chunk: usize,
    runs: usize,
    seed: u64,
) -> Result<BenchReport> {
    if batch == 0 || chunk == 0 || runs == 0 {
        return Err(Error::Config(
            "benchmark batch, chunk and run counts must be positive".into(),
        ));
    }
    let n = model.config.n_nodes;
    let m = model.config.input_window;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk = chunk.min(batch);
    let x = Array4::from_shape_simple_fn((chunk, m, n, 1), || rng.gen_range(-1.0..1.0));
    let chunks_per_run = batch.div_ceil(chunk);

    let pass = || -> Result<f64> {
        let mut acc = 0.0;
        for _ in 0..chunks_per_run {
            let y = model.forward(&x, lap)?;
            acc += y[[0, 0, 0, 0]];
        }
        Ok(acc)
    };
    let mut sink = 0.0;
    for _ in 0..BENCH_WARMUP {
        sink += pass()?;
    }
    let start = Instant::now();
    for _ in 0..runs {
        sink += pass()?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    // Keep the accumulated output observable so the loop cannot be elided.
    if !sink.is_finite() {
        return Err(Error::Diverged("benchmark forward pass produced non-finite output".into()));
    }
    Ok(BenchReport {
        mean_seconds: elapsed / runs as f64,
        runs,
        batch: chunks_per_run * chunk,
        flops: flops_for_batch(&model.config, chunks_per_run * chunk) as f64,
        param_count: model.config.param_count(),
    })
}
