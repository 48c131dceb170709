use ndarray::{Array1, Array3, Array4, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::laplacian::ScaledLaplacian;
use super::layers::{
    ChebConv, ChebConvCache, ChebConvGrads, LayerNorm, LayerNormCache, LayerNormGrads, NodeDense,
    NodeDenseCache, NodeDenseGrads, TemporalConv, TemporalConvCache, TemporalConvGrads,
};

/// Ordered hidden-layer outputs captured during a forward pass: four temporal
/// taps (two per block) and two spatial taps, all post-activation.
#[derive(Debug, Clone)]
pub struct FeatureTaps {
    pub temporal: Vec<Array4<f64>>,
    pub spatial: Vec<Array4<f64>>,
}

/// Upstream gradients flowing into the taps, e.g. from feature-based
/// distillation losses. `None` entries contribute nothing.
#[derive(Debug, Clone, Default)]
pub struct TapGrads {
    pub temporal: Vec<Option<Array4<f64>>>,
    pub spatial: Vec<Option<Array4<f64>>>,
}

impl TapGrads {
    pub fn none() -> Self {
        TapGrads {
            temporal: vec![None, None, None, None],
            spatial: vec![None, None],
        }
    }
}

/// One spatio-temporal block: temporal conv, Chebyshev graph conv, temporal
/// conv, layer normalisation, dropout.
#[derive(Debug, Clone)]
pub struct StBlock {
    pub t1: TemporalConv,
    pub spatial: ChebConv,
    pub t2: TemporalConv,
    pub norm: LayerNorm,
}

pub struct BlockCache {
    t1: TemporalConvCache,
    spatial: ChebConvCache,
    t2: TemporalConvCache,
    norm: LayerNormCache,
    dropout_mask: Option<Array4<f64>>,
}

pub struct BlockGrads {
    pub t1: TemporalConvGrads,
    pub spatial: ChebConvGrads,
    pub t2: TemporalConvGrads,
    pub norm: LayerNormGrads,
}

/// The full ST-GCN: two hidden blocks plus an output block that collapses the
/// remaining timesteps and projects to one value per node.
#[derive(Debug, Clone)]
pub struct StGcn {
    pub config: ModelConfig,
    pub block1: StBlock,
    pub block2: StBlock,
    pub out_conv: TemporalConv,
    pub out_norm: LayerNorm,
    pub out_proj: NodeDense,
}

pub struct ForwardCache {
    b1: BlockCache,
    b2: BlockCache,
    out_conv: TemporalConvCache,
    out_norm: LayerNormCache,
    out_proj: NodeDenseCache,
}

/// Parameter gradients, mirroring [`StGcn`] tensor for tensor.
pub struct ModelGrads {
    pub b1: BlockGrads,
    pub b2: BlockGrads,
    pub out_conv: TemporalConvGrads,
    pub out_norm: LayerNormGrads,
    pub out_proj: NodeDenseGrads,
}

/// Names of the maskable hidden-block weight tensors, in canonical order.
/// Biases, normalisation affines and the output block are never masked.
pub const HIDDEN_WEIGHT_NAMES: [&str; 6] = [
    "block1.t1.w",
    "block1.spatial.w",
    "block1.t2.w",
    "block2.t1.w",
    "block2.spatial.w",
    "block2.t2.w",
];

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> impl FnMut() -> f64 + '_ {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    move || rng.gen_range(-limit..limit)
}

fn init_tconv(rng: &mut ChaCha8Rng, k: usize, c_in: usize, c_out: usize) -> TemporalConv {
    let mut sample = glorot(rng, k * c_in, 2 * c_out);
    TemporalConv {
        w: Array3::from_shape_simple_fn((k, c_in, 2 * c_out), &mut sample),
        b: Array1::zeros(2 * c_out),
    }
}

fn init_cheb(rng: &mut ChaCha8Rng, ks: usize, c_in: usize, c_out: usize) -> ChebConv {
    let mut sample = glorot(rng, ks * c_in, c_out);
    ChebConv {
        w: Array3::from_shape_simple_fn((ks, c_in, c_out), &mut sample),
    }
}

/// Builds a model with Glorot-uniform weights, deterministically per seed.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<StGcn> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kt = config.temporal_kernel;
    let ks = config.spatial_order;
    let n = config.n_nodes;
    let mut block = |c: [usize; 3]| StBlock {
        t1: init_tconv(&mut rng, kt, c[0], c[1]),
        spatial: init_cheb(&mut rng, ks, c[1], c[1]),
        t2: init_tconv(&mut rng, kt, c[1], c[2]),
        norm: LayerNorm::new(n, c[2]),
    };
    let block1 = block(config.block1);
    let block2 = block(config.block2);
    let c_out = config.block2[2];
    let t_rem = config.remaining_window() as usize;
    let out_conv = init_tconv(&mut rng, t_rem, c_out, c_out);
    let out_norm = LayerNorm::new(n, c_out);
    let mut sample = glorot(&mut rng, c_out, 1);
    let out_proj = NodeDense {
        w: Array1::from_shape_simple_fn(c_out, &mut sample),
        b: Array1::zeros(n),
    };
    Ok(StGcn {
        config: config.clone(),
        block1,
        block2,
        out_conv,
        out_norm,
        out_proj,
    })
}

impl StBlock {
    fn forward(
        &self,
        x: &Array4<f64>,
        lap: &ScaledLaplacian,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
        taps: &mut FeatureTaps,
    ) -> (Array4<f64>, BlockCache) {
        let (h1, t1c) = self.t1.forward(x);
        taps.temporal.push(h1.clone());
        let (hs, spc) = self.spatial.forward(&h1, lap);
        taps.spatial.push(hs.clone());
        let (h2, t2c) = self.t2.forward(&hs);
        taps.temporal.push(h2.clone());
        let (mut out, nc) = self.norm.forward(&h2);
        let dropout_mask = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask = Array4::from_shape_simple_fn(out.dim(), || {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                out = &out * &mask;
                Some(mask)
            }
            _ => None,
        };
        (
            out,
            BlockCache {
                t1: t1c,
                spatial: spc,
                t2: t2c,
                norm: nc,
                dropout_mask,
            },
        )
    }

    /// `tap_grads`: (first temporal tap, spatial tap, second temporal tap).
    #[allow(clippy::type_complexity)]
    fn backward(
        &self,
        d_out: &Array4<f64>,
        cache: &BlockCache,
        lap: &ScaledLaplacian,
        tap_grads: (Option<&Array4<f64>>, Option<&Array4<f64>>, Option<&Array4<f64>>),
    ) -> (Array4<f64>, BlockGrads) {
        let d = match &cache.dropout_mask {
            Some(mask) => d_out * mask,
            None => d_out.clone(),
        };
        let (mut d, norm_g) = self.norm.backward(&d, &cache.norm);
        if let Some(g) = tap_grads.2 {
            d = d + g;
        }
        let (mut d, t2_g) = self.t2.backward(&d, &cache.t2);
        if let Some(g) = tap_grads.1 {
            d = d + g;
        }
        let (mut d, sp_g) = self.spatial.backward(&d, &cache.spatial, lap);
        if let Some(g) = tap_grads.0 {
            d = d + g;
        }
        let (d_in, t1_g) = self.t1.backward(&d, &cache.t1);
        (
            d_in,
            BlockGrads {
                t1: t1_g,
                spatial: sp_g,
                t2: t2_g,
                norm: norm_g,
            },
        )
    }
}

impl StGcn {
    /// Inference forward pass: no dropout, caches discarded.
    pub fn forward(&self, x: &Array4<f64>, lap: &ScaledLaplacian) -> Result<Array4<f64>> {
        Ok(self.forward_internal(x, lap, None)?.0)
    }

    /// Forward pass exposing the hidden-layer taps used for distillation.
    pub fn forward_with_taps(
        &self,
        x: &Array4<f64>,
        lap: &ScaledLaplacian,
    ) -> Result<(Array4<f64>, FeatureTaps)> {
        let (y, taps, _) = self.forward_internal(x, lap, None)?;
        Ok((y, taps))
    }

    /// Training forward pass: applies dropout when a generator is supplied and
    /// returns the cache consumed by [`StGcn::backward`].
    pub fn forward_train(
        &self,
        x: &Array4<f64>,
        lap: &ScaledLaplacian,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array4<f64>, FeatureTaps, ForwardCache)> {
        self.forward_internal(x, lap, dropout_rng)
    }

    fn forward_internal(
        &self,
        x: &Array4<f64>,
        lap: &ScaledLaplacian,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array4<f64>, FeatureTaps, ForwardCache)> {
        let (_, t, n, c) = x.dim();
        if t != self.config.input_window || n != self.config.n_nodes || c != self.config.block1[0] {
            return Err(Error::Shape(format!(
                "input shape (_, {t}, {n}, {c}) does not match config (_, {}, {}, {})",
                self.config.input_window, self.config.n_nodes, self.config.block1[0]
            )));
        }
        if lap.n_nodes() != n {
            return Err(Error::Shape(format!(
                "laplacian has {} nodes, model expects {n}",
                lap.n_nodes()
            )));
        }
        let rate = self.config.dropout;
        let mut taps = FeatureTaps {
            temporal: Vec::with_capacity(4),
            spatial: Vec::with_capacity(2),
        };
        let (h, b1c) = self.block1.forward(
            x,
            lap,
            dropout_rng.as_deref_mut().map(|r| (rate, r)),
            &mut taps,
        );
        let (h, b2c) = self.block2.forward(
            &h,
            lap,
            dropout_rng.as_deref_mut().map(|r| (rate, r)),
            &mut taps,
        );
        let (h, occ) = self.out_conv.forward(&h);
        let (h, onc) = self.out_norm.forward(&h);
        let (y, opc) = self.out_proj.forward(&h);
        Ok((
            y,
            taps,
            ForwardCache {
                b1: b1c,
                b2: b2c,
                out_conv: occ,
                out_norm: onc,
                out_proj: opc,
            },
        ))
    }

    /// Backpropagates the prediction gradient plus any tap gradients through
    /// the cached forward pass.
    pub fn backward(
        &self,
        d_pred: &Array4<f64>,
        tap_grads: &TapGrads,
        cache: &ForwardCache,
        lap: &ScaledLaplacian,
    ) -> ModelGrads {
        fn tg(v: &[Option<Array4<f64>>], i: usize) -> Option<&Array4<f64>> {
            v.get(i).and_then(|o| o.as_ref())
        }
        let (d, proj_g) = self.out_proj.backward(d_pred, &cache.out_proj);
        let (d, out_norm_g) = self.out_norm.backward(&d, &cache.out_norm);
        let (d, out_conv_g) = self.out_conv.backward(&d, &cache.out_conv);
        let (d, b2_g) = self.block2.backward(
            &d,
            &cache.b2,
            lap,
            (
                tg(&tap_grads.temporal, 2),
                tg(&tap_grads.spatial, 1),
                tg(&tap_grads.temporal, 3),
            ),
        );
        let (_, b1_g) = self.block1.backward(
            &d,
            &cache.b1,
            lap,
            (
                tg(&tap_grads.temporal, 0),
                tg(&tap_grads.spatial, 0),
                tg(&tap_grads.temporal, 1),
            ),
        );
        ModelGrads {
            b1: b1_g,
            b2: b2_g,
            out_conv: out_conv_g,
            out_norm: out_norm_g,
            out_proj: proj_g,
        }
    }

    /// All trainable tensors in canonical order.
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let mut v: Vec<(&'static str, ArrayViewD<'_, f64>)> = Vec::new();
        {
            let blk = &self.block1;
            v.push(("block1.t1.w", blk.t1.w.view().into_dyn()));
            v.push(("block1.t1.b", blk.t1.b.view().into_dyn()));
            v.push(("block1.spatial.w", blk.spatial.w.view().into_dyn()));
            v.push(("block1.t2.w", blk.t2.w.view().into_dyn()));
            v.push(("block1.t2.b", blk.t2.b.view().into_dyn()));
            v.push(("block1.norm.gamma", blk.norm.gamma.view().into_dyn()));
            v.push(("block1.norm.beta", blk.norm.beta.view().into_dyn()));
        }
        {
            let blk = &self.block2;
            v.push(("block2.t1.w", blk.t1.w.view().into_dyn()));
            v.push(("block2.t1.b", blk.t1.b.view().into_dyn()));
            v.push(("block2.spatial.w", blk.spatial.w.view().into_dyn()));
            v.push(("block2.t2.w", blk.t2.w.view().into_dyn()));
            v.push(("block2.t2.b", blk.t2.b.view().into_dyn()));
            v.push(("block2.norm.gamma", blk.norm.gamma.view().into_dyn()));
            v.push(("block2.norm.beta", blk.norm.beta.view().into_dyn()));
        }
        v.push(("out.conv.w", self.out_conv.w.view().into_dyn()));
        v.push(("out.conv.b", self.out_conv.b.view().into_dyn()));
        v.push(("out.norm.gamma", self.out_norm.gamma.view().into_dyn()));
        v.push(("out.norm.beta", self.out_norm.beta.view().into_dyn()));
        v.push(("out.proj.w", self.out_proj.w.view().into_dyn()));
        v.push(("out.proj.b", self.out_proj.b.view().into_dyn()));
        v
    }

    /// Mutable views over all trainable tensors, in the same order as
    /// [`StGcn::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        let mut v: Vec<(&'static str, ArrayViewMutD<'_, f64>)> = Vec::new();
        {
            let blk = &mut self.block1;
            v.push(("block1.t1.w", blk.t1.w.view_mut().into_dyn()));
            v.push(("block1.t1.b", blk.t1.b.view_mut().into_dyn()));
            v.push(("block1.spatial.w", blk.spatial.w.view_mut().into_dyn()));
            v.push(("block1.t2.w", blk.t2.w.view_mut().into_dyn()));
            v.push(("block1.t2.b", blk.t2.b.view_mut().into_dyn()));
            v.push(("block1.norm.gamma", blk.norm.gamma.view_mut().into_dyn()));
            v.push(("block1.norm.beta", blk.norm.beta.view_mut().into_dyn()));
        }
        {
            let blk = &mut self.block2;
            v.push(("block2.t1.w", blk.t1.w.view_mut().into_dyn()));
            v.push(("block2.t1.b", blk.t1.b.view_mut().into_dyn()));
            v.push(("block2.spatial.w", blk.spatial.w.view_mut().into_dyn()));
            v.push(("block2.t2.w", blk.t2.w.view_mut().into_dyn()));
            v.push(("block2.t2.b", blk.t2.b.view_mut().into_dyn()));
            v.push(("block2.norm.gamma", blk.norm.gamma.view_mut().into_dyn()));
            v.push(("block2.norm.beta", blk.norm.beta.view_mut().into_dyn()));
        }
        v.push(("out.conv.w", self.out_conv.w.view_mut().into_dyn()));
        v.push(("out.conv.b", self.out_conv.b.view_mut().into_dyn()));
        v.push(("out.norm.gamma", self.out_norm.gamma.view_mut().into_dyn()));
        v.push(("out.norm.beta", self.out_norm.beta.view_mut().into_dyn()));
        v.push(("out.proj.w", self.out_proj.w.view_mut().into_dyn()));
        v.push(("out.proj.b", self.out_proj.b.view_mut().into_dyn()));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

impl ModelGrads {
    /// Gradient tensors in the same canonical order as [`StGcn::tensors`].
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let mut v: Vec<(&'static str, ArrayViewD<'_, f64>)> = Vec::new();
        {
            let g = &self.b1;
            v.push(("block1.t1.w", g.t1.w.view().into_dyn()));
            v.push(("block1.t1.b", g.t1.b.view().into_dyn()));
            v.push(("block1.spatial.w", g.spatial.w.view().into_dyn()));
            v.push(("block1.t2.w", g.t2.w.view().into_dyn()));
            v.push(("block1.t2.b", g.t2.b.view().into_dyn()));
            v.push(("block1.norm.gamma", g.norm.gamma.view().into_dyn()));
            v.push(("block1.norm.beta", g.norm.beta.view().into_dyn()));
        }
        {
            let g = &self.b2;
            v.push(("block2.t1.w", g.t1.w.view().into_dyn()));
            v.push(("block2.t1.b", g.t1.b.view().into_dyn()));
            v.push(("block2.spatial.w", g.spatial.w.view().into_dyn()));
            v.push(("block2.t2.w", g.t2.w.view().into_dyn()));
            v.push(("block2.t2.b", g.t2.b.view().into_dyn()));
            v.push(("block2.norm.gamma", g.norm.gamma.view().into_dyn()));
            v.push(("block2.norm.beta", g.norm.beta.view().into_dyn()));
        }
        v.push(("out.conv.w", self.out_conv.w.view().into_dyn()));
        v.push(("out.conv.b", self.out_conv.b.view().into_dyn()));
        v.push(("out.norm.gamma", self.out_norm.gamma.view().into_dyn()));
        v.push(("out.norm.beta", self.out_norm.beta.view().into_dyn()));
        v.push(("out.proj.w", self.out_proj.w.view().into_dyn()));
        v.push(("out.proj.b", self.out_proj.b.view().into_dyn()));
        v
    }
}
