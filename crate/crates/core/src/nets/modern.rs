//! Residual network built from pre-norm blocks:
//! `x + SN-Linear(ReLU(SN-Linear(LayerNorm(x))))`.
//!
//! The full network is `input projection → blocks → LayerNorm → linear head`.
//! Both linear layers inside a block are divided by a running estimate of
//! their largest singular value. The estimate comes from one power-iteration
//! step per training forward pass, with the left/right vectors kept between
//! calls; the gradient flows through `σ = uᵀWv` with `u, v` held fixed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::dense;

const LN_EPS: f64 = 1e-5;
const SIGMA_FLOOR: f64 = 1e-12;

/// One power-iteration step on `w` (shape out × in).
///
/// Updates `v ← normalize(wᵀu)`, `u ← normalize(w v)` and returns
/// `σ = uᵀ w v`.
pub fn power_iteration(w: ArrayView2<f64>, u: &mut Array1<f64>, v: &mut Array1<f64>) -> f64 {
    let wt_u = w.t().dot(u);
    let n = wt_u.dot(&wt_u).sqrt();
    if n > 0.0 {
        *v = wt_u / n;
    }
    let wv = w.dot(v);
    let n = wv.dot(&wv).sqrt();
    if n > 0.0 {
        *u = wv / n;
    }
    u.dot(&w.dot(v))
}

/// Singular vector estimates for one spectrally-normalized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

impl SpectralState {
    fn random<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        let mut draw = |n: usize| {
            let a: Array1<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = a.dot(&a).sqrt();
            a / norm
        };
        let u = draw(out);
        let v = draw(inp);
        Self { u, v }
    }

    fn sigma(&self, w: ArrayView2<f64>) -> f64 {
        self.u.dot(&w.dot(&self.v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModernNet {
    input: usize,
    hidden: usize,
    blocks: usize,
    output: usize,
    params: Vec<f64>,
    /// Two entries per block.
    spectral: Vec<SpectralState>,
}

#[derive(Debug, Clone)]
struct LayerNormTape {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
struct BlockTape {
    ln: LayerNormTape,
    h: Array2<f64>,
    a1: Array2<f64>,
    sigma: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct ModernTape {
    x: Array2<f64>,
    blocks: Vec<BlockTape>,
    final_ln: LayerNormTape,
    final_h: Array2<f64>,
}

// per-block parameter layout
fn block_len(h: usize) -> usize {
    2 * h + 2 * dense::layer_len(h, h)
}

fn layer_norm(
    x: ArrayView2<f64>,
    gain: ArrayView1<f64>,
    shift: ArrayView1<f64>,
) -> (Array2<f64>, LayerNormTape) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = &x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &gain + shift;
    (y, LayerNormTape { xhat, inv_std })
}

/// Returns the input gradient; accumulates gain/shift gradients.
fn layer_norm_backward(
    tape: &LayerNormTape,
    gain: ArrayView1<f64>,
    dy: ArrayView2<f64>,
    g_gain: &mut [f64],
    g_shift: &mut [f64],
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let gg = (&dy * &tape.xhat).sum_axis(Axis(0));
    let gs = dy.sum_axis(Axis(0));
    for (a, b) in g_gain.iter_mut().zip(gg.iter()) {
        *a += b;
    }
    for (a, b) in g_shift.iter_mut().zip(gs.iter()) {
        *a += b;
    }
    let dxhat = &dy * &gain;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &tape.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat
        - mean_dxhat.view().insert_axis(Axis(1))
        - &tape.xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1));
    dx *= &tape.inv_std.view().insert_axis(Axis(1));
    dx
}

impl ModernNet {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        blocks: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        assert!(input > 0 && hidden > 0 && output > 0);
        let len = Self::param_len(input, hidden, blocks, output);
        let mut params = vec![0.0; len];
        dense::init_uniform_fan_in(&mut params, input, hidden, rng);
        let mut off = dense::layer_len(input, hidden);
        let mut spectral = Vec::with_capacity(2 * blocks);
        for _ in 0..blocks {
            params[off..off + hidden].fill(1.0);
            off += 2 * hidden;
            for _ in 0..2 {
                dense::init_uniform_fan_in(&mut params[off..], hidden, hidden, rng);
                off += dense::layer_len(hidden, hidden);
                spectral.push(SpectralState::random(hidden, hidden, rng));
            }
        }
        params[off..off + hidden].fill(1.0);
        off += 2 * hidden;
        dense::init_uniform_fan_in(&mut params[off..], hidden, output, rng);
        let mut net = Self {
            input,
            hidden,
            blocks,
            output,
            params,
            spectral,
        };
        for _ in 0..15 {
            net.refresh_spectral();
        }
        net
    }

    pub fn param_len(input: usize, hidden: usize, blocks: usize, output: usize) -> usize {
        dense::layer_len(input, hidden)
            + blocks * block_len(hidden)
            + 2 * hidden
            + dense::layer_len(hidden, output)
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn spectral_states(&self) -> &[SpectralState] {
        &self.spectral
    }

    pub fn spectral_states_mut(&mut self) -> &mut [SpectralState] {
        &mut self.spectral
    }

    fn block_offset(&self, b: usize) -> usize {
        dense::layer_len(self.input, self.hidden) + b * block_len(self.hidden)
    }

    fn final_offset(&self) -> usize {
        self.block_offset(self.blocks)
    }

    /// Offsets of (ln gain, ln shift, linear 1, linear 2) inside block `b`.
    fn block_parts(&self, b: usize) -> (usize, usize, usize, usize) {
        let h = self.hidden;
        let o = self.block_offset(b);
        (o, o + h, o + 2 * h, o + 2 * h + dense::layer_len(h, h))
    }

    /// Raw (unnormalized) weight of linear `k ∈ {0, 1}` in block `b`.
    pub fn block_weight(&self, b: usize, k: usize) -> ArrayView2<'_, f64> {
        let (_, _, l1, l2) = self.block_parts(b);
        let off = if k == 0 { l1 } else { l2 };
        dense::weight(&self.params[off..], self.hidden, self.hidden)
    }

    /// Current σ estimate for linear `k` of block `b`.
    pub fn sigma(&self, b: usize, k: usize) -> f64 {
        self.spectral[2 * b + k].sigma(self.block_weight(b, k))
    }

    /// One power-iteration step for every normalized layer.
    pub fn refresh_spectral(&mut self) {
        for b in 0..self.blocks {
            for k in 0..2 {
                let (_, _, l1, l2) = self.block_parts(b);
                let off = if k == 0 { l1 } else { l2 };
                let w = dense::weight(&self.params[off..], self.hidden, self.hidden);
                let st = &mut self.spectral[2 * b + k];
                power_iteration(w, &mut st.u, &mut st.v);
            }
        }
    }

    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_tape(x).0
    }

    pub(crate) fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, ModernTape) {
        let (h, p) = (self.hidden, &self.params);
        let mut cur = dense::affine(
            x,
            dense::weight(p, self.input, h),
            dense::bias(p, self.input, h),
        );
        let mut tapes = Vec::with_capacity(self.blocks);
        for b in 0..self.blocks {
            let (g, s, l1, l2) = self.block_parts(b);
            let (hn, ln) = layer_norm(
                cur.view(),
                ArrayView1::from(&p[g..g + h]),
                ArrayView1::from(&p[s..s + h]),
            );
            let sigma = [
                self.sigma(b, 0).max(SIGMA_FLOOR),
                self.sigma(b, 1).max(SIGMA_FLOOR),
            ];
            let w1 = dense::weight(&p[l1..], h, h);
            let mut a1 = hn.dot(&w1.t()) / sigma[0] + dense::bias(&p[l1..], h, h);
            dense::relu_inplace(&mut a1);
            let w2 = dense::weight(&p[l2..], h, h);
            let z2 = a1.dot(&w2.t()) / sigma[1] + dense::bias(&p[l2..], h, h);
            let out = &cur + &z2;
            tapes.push(BlockTape {
                ln,
                h: hn,
                a1,
                sigma,
            });
            cur = out;
        }
        let f = self.final_offset();
        let (hn, final_ln) = layer_norm(
            cur.view(),
            ArrayView1::from(&p[f..f + h]),
            ArrayView1::from(&p[f + h..f + 2 * h]),
        );
        let head = f + 2 * h;
        let y = dense::affine(
            hn.view(),
            dense::weight(&p[head..], h, self.output),
            dense::bias(&p[head..], h, self.output),
        );
        (
            y,
            ModernTape {
                x: x.to_owned(),
                blocks: tapes,
                final_ln,
                final_h: hn,
            },
        )
    }

    pub(crate) fn backward(
        &self,
        tape: &ModernTape,
        upstream: ArrayView2<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let (h, p) = (self.hidden, &self.params);
        let mut grads = vec![0.0; p.len()];

        let f = self.final_offset();
        let head = f + 2 * h;
        {
            let (gw, gb) = dense::split_grad_mut(&mut grads[head..], h, self.output);
            dense::accumulate_param_grad(tape.final_h.view(), upstream, gw, gb);
        }
        let dh = upstream.dot(&dense::weight(&p[head..], h, self.output));
        let (gg, gs) = grads[f..f + 2 * h].split_at_mut(h);
        let mut dcur = layer_norm_backward(
            &tape.final_ln,
            ArrayView1::from(&p[f..f + h]),
            dh.view(),
            gg,
            gs,
        );

        for b in (0..self.blocks).rev() {
            let bt = &tape.blocks[b];
            let (g, _, l1, l2) = self.block_parts(b);

            // second linear: z2 = a1 · (W2/σ2)ᵀ + b2
            let w2 = dense::weight(&p[l2..], h, h);
            let mut gw2 = Array2::<f64>::zeros((h, h));
            let mut gb2 = Array1::<f64>::zeros(h);
            dense::accumulate_param_grad(bt.a1.view(), dcur.view(), gw2.view_mut(), gb2.view_mut());
            let mut da1 = dcur.dot(&w2) / bt.sigma[1];
            self.write_sn_grad(&mut grads[l2..], b, 1, gw2, gb2, bt.sigma[1]);

            dense::relu_mask(&mut da1, &bt.a1);
            let w1 = dense::weight(&p[l1..], h, h);
            let mut gw1 = Array2::<f64>::zeros((h, h));
            let mut gb1 = Array1::<f64>::zeros(h);
            dense::accumulate_param_grad(bt.h.view(), da1.view(), gw1.view_mut(), gb1.view_mut());
            let dh = da1.dot(&w1) / bt.sigma[0];
            self.write_sn_grad(&mut grads[l1..], b, 0, gw1, gb1, bt.sigma[0]);

            let (gg, gs) = grads[g..g + 2 * h].split_at_mut(h);
            let dx_ln =
                layer_norm_backward(&bt.ln, ArrayView1::from(&p[g..g + h]), dh.view(), gg, gs);
            dcur = dcur + dx_ln;
        }

        {
            let (gw, gb) = dense::split_grad_mut(&mut grads[..], self.input, h);
            dense::accumulate_param_grad(tape.x.view(), dcur.view(), gw, gb);
        }
        let dx = dcur.dot(&dense::weight(p, self.input, h));
        (grads, dx)
    }

    /// Chain rule through `Ŵ = W / σ(W)` with `σ = uᵀWv`:
    /// `dW = G/σ − (⟨G, W⟩/σ²) u vᵀ`, where `G` is the gradient w.r.t. `W`
    /// as if it were used unnormalized (i.e. `deltaᵀ · x`).
    fn write_sn_grad(
        &self,
        out: &mut [f64],
        b: usize,
        k: usize,
        g_raw: Array2<f64>,
        gb: Array1<f64>,
        sigma: f64,
    ) {
        let h = self.hidden;
        let w = self.block_weight(b, k);
        // g_hat = dL/dŴ
        let g_hat = g_raw;
        let mut gw = &g_hat / sigma;
        let raw_sigma = self.sigma(b, k);
        if raw_sigma > SIGMA_FLOOR {
            let st = &self.spectral[2 * b + k];
            let coef = (&g_hat * &w).sum() / (sigma * sigma);
            let outer =
                st.u.view()
                    .insert_axis(Axis(1))
                    .dot(&st.v.view().insert_axis(Axis(0)));
            gw.scaled_add(-coef, &outer);
        }
        let (mut gwv, mut gbv) = dense::split_grad_mut(out, h, h);
        gwv += &gw;
        gbv += &gb;
    }
}
