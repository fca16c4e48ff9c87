use crate::error::Result;
use crate::numerics::{init, Real, RngState, Tape, Tensor, Var};
use crate::params::{impl_params, ForwardCtx};

use super::attention::{FeedForward, LayerNorm};

/// Gated selective-scan mixer along axis 1 of `[S, L, D]`:
/// `u = xW_u`, `g = conv(x)`, `y = (silu(g) * scan(u)) W_o`.
#[derive(Debug, Clone)]
pub struct SsmMixer<T: Real = f32> {
    pub w_u: Tensor<T>,
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub w_delta: Tensor<T>,
    pub b_delta: Tensor<T>,
    pub w_b: Tensor<T>,
    pub w_c: Tensor<T>,
    pub a_log: Tensor<T>,
    pub d_skip: Tensor<T>,
    pub w_o: Tensor<T>,
}

impl_params!(SsmMixer { w_u, conv_w, conv_b, w_delta, b_delta, w_b, w_c, a_log, d_skip, w_o });

impl<T: Real> SsmMixer<T> {
    pub fn new(width: usize, d_state: usize, conv_width: usize, rng: &mut RngState) -> Self {
        // A = -(1..=d_state) per channel
        let a_log: Vec<T> = (0..width)
            .flat_map(|_| (1..=d_state).map(|s| T::c((s as f64).ln())))
            .collect();
        SsmMixer {
            w_u: init::fan_in_uniform(&[width, width], rng),
            conv_w: init::fan_in_uniform(&[conv_width, width], rng),
            conv_b: init::zeros(&[width]),
            w_delta: init::fan_in_uniform(&[width, width], rng),
            b_delta: init::zeros(&[width]),
            w_b: init::fan_in_uniform(&[width, d_state], rng),
            w_c: init::fan_in_uniform(&[width, d_state], rng),
            a_log: Tensor::new(&[width, d_state], a_log)
                .expect("a_log shape")
                .with_grad(),
            d_skip: init::ones(&[width]),
            w_o: init::fan_in_uniform(&[width, width], rng),
        }
    }

    pub fn d_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let p = |t: &Tensor<T>| tape.param(t);
        let u = x.matmul(p(&self.w_u))?;
        let g = x.conv1d_causal(p(&self.conv_w), p(&self.conv_b))?;
        let delta = u.linear(p(&self.w_delta), Some(p(&self.b_delta)))?.softplus()?;
        let b = u.matmul(p(&self.w_b))?;
        let c = u.matmul(p(&self.w_c))?;
        let s = u.selective_scan(delta, p(&self.a_log), b, c, p(&self.d_skip))?;
        g.silu()?.mul(s)?.matmul(p(&self.w_o))
    }
}

/// Spatial propagation: for every time step independently, a residual
/// selective scan across sensors in their stored order.
#[derive(Debug, Clone)]
pub struct SpatialSsm<T: Real = f32> {
    pub norm: LayerNorm<T>,
    pub mixer: SsmMixer<T>,
}

impl_params!(SpatialSsm {} nested { norm, mixer });

impl<T: Real> SpatialSsm<T> {
    pub fn new(width: usize, d_state: usize, conv_width: usize, rng: &mut RngState) -> Self {
        SpatialSsm {
            norm: LayerNorm::new(width),
            mixer: SsmMixer::new(width, d_state, conv_width, rng),
        }
    }

    /// `h [B, T, N, D] -> [B, T, N, D]`
    pub fn forward<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let hs = h.shape();
        let flat = h.reshape(&[hs[0] * hs[1], hs[2], hs[3]])?;
        let m = self.mixer.forward(tape, self.norm.forward(tape, flat)?)?;
        flat.add(m)?.reshape(&hs)
    }
}

/// Ablation stage: residual selective scan over time per node, then the
/// same residual feed-forward as the attention stage.
#[derive(Debug, Clone)]
pub struct TemporalSsm<T: Real = f32> {
    pub norm1: LayerNorm<T>,
    pub mixer: SsmMixer<T>,
    pub norm2: LayerNorm<T>,
    pub ffn: FeedForward<T>,
}

impl_params!(TemporalSsm {} nested { norm1, mixer, norm2, ffn });

impl<T: Real> TemporalSsm<T> {
    pub fn new(width: usize, d_state: usize, conv_width: usize, rng: &mut RngState) -> Self {
        TemporalSsm {
            norm1: LayerNorm::new(width),
            mixer: SsmMixer::new(width, d_state, conv_width, rng),
            norm2: LayerNorm::new(width),
            ffn: FeedForward::new(width, rng),
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        let hs = h.shape();
        let (b, t, n, d) = (hs[0], hs[1], hs[2], hs[3]);
        let x = h.permute(&[0, 2, 1, 3])?.reshape(&[b * n, t, d])?;
        let z = x.add(self.mixer.forward(tape, self.norm1.forward(tape, x)?)?)?;
        let f = self
            .ffn
            .forward(tape, self.norm2.forward(tape, z)?)?
            .dropout(ctx.dropout, &mut ctx.rng, ctx.train)?;
        z.add(f)?.reshape(&[b, n, t, d])?.permute(&[0, 2, 1, 3])
    }
}
