use crate::error::{FastError, Result};
use crate::numerics::{init, Real, RngState, Tape, Tensor, Var};
use crate::params::{impl_params, ForwardCtx};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Bias-free multi-head self-attention over axis 1 of `[S, L, D]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T: Real = f32> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_out: Tensor<T>,
}

impl_params!(MultiHeadAttention { w_q, w_k, w_v, w_out });

impl<T: Real> MultiHeadAttention<T> {
    pub fn new(width: usize, rng: &mut RngState) -> Self {
        MultiHeadAttention {
            w_q: init::fan_in_uniform(&[width, width], rng),
            w_k: init::fan_in_uniform(&[width, width], rng),
            w_v: init::fan_in_uniform(&[width, width], rng),
            w_out: init::fan_in_uniform(&[width, width], rng),
        }
    }

    /// Returns the output and the attention weights `[S, heads, L, L]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        heads: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let xs = x.shape();
        let (s, l, d) = (xs[0], xs[1], xs[2]);
        if heads == 0 || d % heads != 0 {
            return Err(FastError::Config(format!(
                "width {d} not divisible by {heads} heads"
            )));
        }
        let dk = d / heads;
        let split = |v: Var<'t, T>, perm: &[usize]| v.reshape(&[s, l, heads, dk])?.permute(perm);
        let q = split(x.matmul(tape.param(&self.w_q))?, &[0, 2, 1, 3])?;
        let k = split(x.matmul(tape.param(&self.w_k))?, &[0, 2, 3, 1])?;
        let v = split(x.matmul(tape.param(&self.w_v))?, &[0, 2, 1, 3])?;
        let scale = T::c(1.0 / (dk as f64).sqrt());
        let weights = q.matmul(k)?.scale(scale)?.softmax_lastdim()?;
        let dropped = weights.dropout(ctx.dropout, &mut ctx.rng, ctx.train)?;
        let mixed = dropped
            .matmul(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[s, l, d])?;
        Ok((mixed.matmul(tape.param(&self.w_out))?, weights))
    }
}

/// Position-wise `D -> 4D -> D` network with ReLU.
#[derive(Debug, Clone)]
pub struct FeedForward<T: Real = f32> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl_params!(FeedForward { w1, b1, w2, b2 });

impl<T: Real> FeedForward<T> {
    pub fn new(width: usize, rng: &mut RngState) -> Self {
        let inner = 4 * width;
        FeedForward {
            w1: init::fan_in_uniform(&[width, inner], rng),
            b1: init::zeros(&[inner]),
            w2: init::fan_in_uniform(&[inner, width], rng),
            b2: init::zeros(&[width]),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(tape.param(&self.w1), Some(tape.param(&self.b1)))?
            .relu()?
            .linear(tape.param(&self.w2), Some(tape.param(&self.b2)))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl_params!(LayerNorm { gamma, beta });

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: init::ones(&[width]),
            beta: init::zeros(&[width]),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(tape.param(&self.gamma), tape.param(&self.beta), LN_EPS)
    }
}

/// Per-node attention over time followed by a residual feed-forward:
/// `a = MHA(LN1(x))`, `out = a + Dropout(FFN(LN2(a)))`.
#[derive(Debug, Clone)]
pub struct TemporalAttention<T: Real = f32> {
    pub norm1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub heads: usize,
}

impl_params!(TemporalAttention {} nested { norm1, attn, norm2, ffn });

impl<T: Real> TemporalAttention<T> {
    pub fn new(width: usize, heads: usize, rng: &mut RngState) -> Self {
        TemporalAttention {
            norm1: LayerNorm::new(width),
            attn: MultiHeadAttention::new(width, rng),
            norm2: LayerNorm::new(width),
            ffn: FeedForward::new(width, rng),
            heads,
        }
    }

    /// `h [B, T, N, D] -> [B, T, N, D]`, plus weights `[B*N, heads, T, T]`.
    pub fn forward_with_weights<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let hs = h.shape();
        let (b, t, n, d) = (hs[0], hs[1], hs[2], hs[3]);
        let per_node = h.permute(&[0, 2, 1, 3])?.reshape(&[b * n, t, d])?;
        let (a, weights) = self
            .attn
            .forward(tape, self.norm1.forward(tape, per_node)?, self.heads, ctx)?;
        let f = self
            .ffn
            .forward(tape, self.norm2.forward(tape, a)?)?
            .dropout(ctx.dropout, &mut ctx.rng, ctx.train)?;
        let out = a
            .add(f)?
            .reshape(&[b, n, t, d])?
            .permute(&[0, 2, 1, 3])?;
        Ok((out, weights))
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(tape, h, ctx)?.0)
    }
}

/// Ablation stage: residual attention across sensors at each time step.
#[derive(Debug, Clone)]
pub struct SpatialAttention<T: Real = f32> {
    pub norm: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub heads: usize,
}

impl_params!(SpatialAttention {} nested { norm, attn });

impl<T: Real> SpatialAttention<T> {
    pub fn new(width: usize, heads: usize, rng: &mut RngState) -> Self {
        SpatialAttention {
            norm: LayerNorm::new(width),
            attn: MultiHeadAttention::new(width, rng),
            heads,
        }
    }

    /// `h [B, T, N, D] -> [B, T, N, D]`, plus weights `[B*T, heads, N, N]`.
    pub fn forward_with_weights<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let hs = h.shape();
        let flat = h.reshape(&[hs[0] * hs[1], hs[2], hs[3]])?;
        let (a, weights) = self
            .attn
            .forward(tape, self.norm.forward(tape, flat)?, self.heads, ctx)?;
        Ok((flat.add(a)?.reshape(&hs)?, weights))
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        h: Var<'t, T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(tape, h, ctx)?.0)
    }
}
