//! Hand-differentiated layers. Every layer exposes a caching forward pass and
//! a backward pass returning input and parameter gradients, which keeps the
//! whole network checkable against finite differences in fp64.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};

use super::laplacian::ScaledLaplacian;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Collapses `(B, T, N, C)` to a `(B*T*N, C)` matrix view for matmuls.
fn as_matrix(x: &Array4<f64>) -> Array2<f64> {
    let (b, t, n, c) = x.dim();
    x.to_owned().into_shape((b * t * n, c)).unwrap()
}

// ---------------------------------------------------------------------------
// Temporal gated convolution
// ---------------------------------------------------------------------------

/// 1-D convolution along time with GLU gating and a parameter-free residual:
/// `y = (conv_lin(x) + align(x)) * sigmoid(conv_gate(x))`. The residual aligns
/// channels by zero-padding (fewer input channels) or truncation (more).
#[derive(Debug, Clone)]
pub struct TemporalConv {
    /// `(kernel, c_in, 2 * c_out)`; the first `c_out` output channels feed the
    /// linear path, the rest the gate.
    pub w: Array3<f64>,
    /// `(2 * c_out)`
    pub b: Array1<f64>,
}

pub struct TemporalConvCache {
    x: Array4<f64>,
    lin_plus_res: Array4<f64>,
    gate: Array4<f64>,
}

pub struct TemporalConvGrads {
    pub w: Array3<f64>,
    pub b: Array1<f64>,
}

impl TemporalConv {
    pub fn kernel(&self) -> usize {
        self.w.dim().0
    }

    pub fn c_in(&self) -> usize {
        self.w.dim().1
    }

    pub fn c_out(&self) -> usize {
        self.w.dim().2 / 2
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, TemporalConvCache) {
        let (batch, t, n, c_in) = x.dim();
        let k = self.kernel();
        let c_out = self.c_out();
        assert_eq!(c_in, self.c_in(), "temporal conv channel mismatch");
        assert!(t >= k, "temporal conv needs at least {k} timesteps, got {t}");
        let t_out = t - k + 1;

        // z = sum_k x[t+k] . w[k] + b, over both GLU halves at once.
        let mut z2 = Array2::from_elem((batch * t_out * n, 2 * c_out), 0.0);
        for kk in 0..k {
            let xs = x.slice(s![.., kk..kk + t_out, .., ..]).to_owned();
            let xm = as_matrix(&xs);
            z2 = z2 + xm.dot(&self.w.index_axis(Axis(0), kk));
        }
        for mut row in z2.rows_mut() {
            row += &self.b;
        }
        let z = z2.into_shape((batch, t_out, n, 2 * c_out)).unwrap();

        let lin = z.slice(s![.., .., .., ..c_out]).to_owned();
        let gate = z.slice(s![.., .., .., c_out..]).mapv(sigmoid);

        // Residual: crop to the trailing t_out steps, align channels.
        let mut lin_plus_res = lin;
        let c_copy = c_in.min(c_out);
        {
            let res = x.slice(s![.., k - 1.., .., ..c_copy]);
            let mut dst = lin_plus_res.slice_mut(s![.., .., .., ..c_copy]);
            dst += &res;
        }

        let y = &lin_plus_res * &gate;
        let cache = TemporalConvCache { x: x.clone(), lin_plus_res, gate };
        (y, cache)
    }

    pub fn backward(
        &self,
        d_y: &Array4<f64>,
        cache: &TemporalConvCache,
    ) -> (Array4<f64>, TemporalConvGrads) {
        let (batch, t, n, c_in) = cache.x.dim();
        let k = self.kernel();
        let c_out = self.c_out();
        let t_out = t - k + 1;

        let d_lpr = d_y * &cache.gate;
        let d_gate_pre = d_y * &cache.lin_plus_res * &cache.gate * &cache.gate.mapv(|g| 1.0 - g);

        // Gradient w.r.t. the pre-activation z, both halves.
        let mut dz = Array4::zeros((batch, t_out, n, 2 * c_out));
        dz.slice_mut(s![.., .., .., ..c_out]).assign(&d_lpr);
        dz.slice_mut(s![.., .., .., c_out..]).assign(&d_gate_pre);
        let dz_m = as_matrix(&dz);

        let mut d_x = Array4::zeros((batch, t, n, c_in));
        let mut d_w = Array3::zeros(self.w.dim());
        for kk in 0..k {
            let xs = cache.x.slice(s![.., kk..kk + t_out, .., ..]).to_owned();
            let xm = as_matrix(&xs);
            d_w.index_axis_mut(Axis(0), kk).assign(&xm.t().dot(&dz_m));
            let dxm = dz_m.dot(&self.w.index_axis(Axis(0), kk).t());
            let dx4 = dxm.into_shape((batch, t_out, n, c_in)).unwrap();
            let mut dst = d_x.slice_mut(s![.., kk..kk + t_out, .., ..]);
            dst += &dx4;
        }
        let d_b = dz_m.sum_axis(Axis(0));

        // Residual path.
        let c_copy = c_in.min(c_out);
        {
            let dres = d_lpr.slice(s![.., .., .., ..c_copy]);
            let mut dst = d_x.slice_mut(s![.., k - 1.., .., ..c_copy]);
            dst += &dres;
        }

        (d_x, TemporalConvGrads { w: d_w, b: d_b })
    }
}

// ---------------------------------------------------------------------------
// Chebyshev spatial graph convolution
// ---------------------------------------------------------------------------

/// Order-`K_s` Chebyshev graph convolution with ReLU and no bias:
/// `y = relu(sum_k T_k(L~) x W_k)`.
#[derive(Debug, Clone)]
pub struct ChebConv {
    /// `(K_s, c_in, c_out)`
    pub w: Array3<f64>,
}

pub struct ChebConvCache {
    /// Chebyshev basis applied to the input, one `(B, T, N, C_in)` per order.
    basis: Vec<Array4<f64>>,
    /// ReLU activation mask on the pre-activation.
    active: Array4<f64>,
}

pub struct ChebConvGrads {
    pub w: Array3<f64>,
}

impl ChebConv {
    pub fn order(&self) -> usize {
        self.w.dim().0
    }

    pub fn c_in(&self) -> usize {
        self.w.dim().1
    }

    pub fn c_out(&self) -> usize {
        self.w.dim().2
    }

    pub fn forward(&self, x: &Array4<f64>, lap: &ScaledLaplacian) -> (Array4<f64>, ChebConvCache) {
        let (batch, t, n, c_in) = x.dim();
        assert_eq!(c_in, self.c_in(), "spatial conv channel mismatch");
        assert_eq!(n, lap.n_nodes(), "laplacian node count mismatch");
        let ks = self.order();
        let c_out = self.c_out();
        let l = &lap.l_tilde;

        let mut basis: Vec<Array4<f64>> = Vec::with_capacity(ks);
        basis.push(x.clone());
        if ks > 1 {
            basis.push(apply_graph(l, x));
        }
        for k in 2..ks {
            let next = apply_graph(l, &basis[k - 1]).mapv(|v| 2.0 * v) - &basis[k - 2];
            basis.push(next);
        }

        let mut pre = Array2::zeros((batch * t * n, c_out));
        for k in 0..ks {
            let bm = as_matrix(&basis[k]);
            pre = pre + bm.dot(&self.w.index_axis(Axis(0), k));
        }
        let pre = pre.into_shape((batch, t, n, c_out)).unwrap();
        let active = pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let y = &pre * &active;
        (y, ChebConvCache { basis, active })
    }

    pub fn backward(
        &self,
        d_y: &Array4<f64>,
        cache: &ChebConvCache,
        lap: &ScaledLaplacian,
    ) -> (Array4<f64>, ChebConvGrads) {
        let ks = self.order();
        let (batch, t, n, c_in) = cache.basis[0].dim();
        let d_pre = d_y * &cache.active;
        let d_pre_m = as_matrix(&d_pre);

        let mut d_w = Array3::zeros(self.w.dim());
        // Gradient w.r.t. each basis tensor T_k(L~) x.
        let mut d_basis: Vec<Array4<f64>> = Vec::with_capacity(ks);
        for k in 0..ks {
            let bm = as_matrix(&cache.basis[k]);
            d_w.index_axis_mut(Axis(0), k).assign(&bm.t().dot(&d_pre_m));
            let g = d_pre_m.dot(&self.w.index_axis(Axis(0), k).t());
            d_basis.push(g.into_shape((batch, t, n, c_in)).unwrap());
        }

        // Reverse the recurrence T_k = 2 L~ T_{k-1} - T_{k-2}; L~ is symmetric
        // so the adjoint propagation reuses apply_graph.
        let l = &lap.l_tilde;
        for k in (2..ks).rev() {
            let prop = apply_graph(l, &d_basis[k]).mapv(|v| 2.0 * v);
            d_basis[k - 1] = &d_basis[k - 1] + &prop;
            d_basis[k - 2] = &d_basis[k - 2] - &d_basis[k];
        }
        let mut d_x = d_basis[0].clone();
        if ks > 1 {
            d_x = d_x + apply_graph(l, &d_basis[1]);
        }
        (d_x, ChebConvGrads { w: d_w })
    }
}

/// Applies an `(N, N)` symmetric operator across the node axis of
/// `(B, T, N, C)`.
fn apply_graph(l: &Array2<f64>, x: &Array4<f64>) -> Array4<f64> {
    let (batch, t, n, c) = x.dim();
    let mut out = Array4::zeros((batch, t, n, c));
    for b in 0..batch {
        for tt in 0..t {
            let xm = x.slice(s![b, tt, .., ..]);
            out.slice_mut(s![b, tt, .., ..]).assign(&l.dot(&xm));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Layer normalisation over (node, channel)
// ---------------------------------------------------------------------------

/// Normalises each `(batch, time)` slice over its `N * C` entries, with a
/// learned per-(node, channel) affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
    pub eps: f64,
}

pub struct LayerNormCache {
    x_hat: Array4<f64>,
    inv_std: Array2<f64>,
}

pub struct LayerNormGrads {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

impl LayerNorm {
    pub fn new(n: usize, c: usize) -> Self {
        LayerNorm {
            gamma: Array2::ones((n, c)),
            beta: Array2::zeros((n, c)),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, LayerNormCache) {
        let (batch, t, n, c) = x.dim();
        let d = (n * c) as f64;
        let mut x_hat = Array4::zeros((batch, t, n, c));
        let mut inv_std = Array2::zeros((batch, t));
        let mut y = Array4::zeros((batch, t, n, c));
        for b in 0..batch {
            for tt in 0..t {
                let slice = x.slice(s![b, tt, .., ..]);
                let mean = slice.sum() / d;
                let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[[b, tt]] = istd;
                for i in 0..n {
                    for j in 0..c {
                        let xh = (slice[[i, j]] - mean) * istd;
                        x_hat[[b, tt, i, j]] = xh;
                        y[[b, tt, i, j]] = self.gamma[[i, j]] * xh + self.beta[[i, j]];
                    }
                }
            }
        }
        (y, LayerNormCache { x_hat, inv_std })
    }

    pub fn backward(
        &self,
        d_y: &Array4<f64>,
        cache: &LayerNormCache,
    ) -> (Array4<f64>, LayerNormGrads) {
        let (batch, t, n, c) = d_y.dim();
        let d = (n * c) as f64;
        let mut d_x = Array4::zeros((batch, t, n, c));
        let mut d_gamma = Array2::zeros((n, c));
        let mut d_beta = Array2::zeros((n, c));
        for b in 0..batch {
            for tt in 0..t {
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for i in 0..n {
                    for j in 0..c {
                        let g = d_y[[b, tt, i, j]];
                        let xh = cache.x_hat[[b, tt, i, j]];
                        d_gamma[[i, j]] += g * xh;
                        d_beta[[i, j]] += g;
                        let dxh = g * self.gamma[[i, j]];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                }
                let istd = cache.inv_std[[b, tt]];
                for i in 0..n {
                    for j in 0..c {
                        let dxh = d_y[[b, tt, i, j]] * self.gamma[[i, j]];
                        let xh = cache.x_hat[[b, tt, i, j]];
                        d_x[[b, tt, i, j]] =
                            istd * (dxh - (sum_dxh + xh * sum_dxh_xh) / d);
                    }
                }
            }
        }
        (d_x, LayerNormGrads { gamma: d_gamma, beta: d_beta })
    }
}

// ---------------------------------------------------------------------------
// Per-node output projection
// ---------------------------------------------------------------------------

/// Collapses channels to one value per node: `y_bn = x_bn . w + b_n`.
#[derive(Debug, Clone)]
pub struct NodeDense {
    /// `(C)`
    pub w: Array1<f64>,
    /// `(N)` — one bias per node.
    pub b: Array1<f64>,
}

pub struct NodeDenseCache {
    x: Array4<f64>,
}

pub struct NodeDenseGrads {
    pub w: Array1<f64>,
    pub b: Array1<f64>,
}

impl NodeDense {
    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, NodeDenseCache) {
        let (batch, t, n, c) = x.dim();
        assert_eq!(t, 1, "output projection expects a collapsed time axis");
        assert_eq!(c, self.w.len());
        assert_eq!(n, self.b.len());
        let mut y = Array4::zeros((batch, 1, n, 1));
        for bb in 0..batch {
            for i in 0..n {
                let mut v = self.b[i];
                for j in 0..c {
                    v += x[[bb, 0, i, j]] * self.w[j];
                }
                y[[bb, 0, i, 0]] = v;
            }
        }
        (y, NodeDenseCache { x: x.clone() })
    }

    pub fn backward(
        &self,
        d_y: &Array4<f64>,
        cache: &NodeDenseCache,
    ) -> (Array4<f64>, NodeDenseGrads) {
        let (batch, _, n, c) = cache.x.dim();
        let mut d_x = Array4::zeros((batch, 1, n, c));
        let mut d_w = Array1::zeros(c);
        let mut d_b = Array1::zeros(n);
        for bb in 0..batch {
            for i in 0..n {
                let g = d_y[[bb, 0, i, 0]];
                d_b[i] += g;
                for j in 0..c {
                    d_w[j] += g * cache.x[[bb, 0, i, j]];
                    d_x[[bb, 0, i, j]] = g * self.w[j];
                }
            }
        }
        (d_x, NodeDenseGrads { w: d_w, b: d_b })
    }
}
