use std::sync::Arc;

use crate::error::{FastError, Result};
use crate::numerics::real::{DType, Real};
use crate::numerics::rng::RngState;
use crate::numerics::runtime;
use crate::numerics::tape::{Tape, Var};

impl<'t, T: Real> Var<'t, T> {
    /// Row softmax over the last axis, max-subtracted.
    pub fn softmax_lastdim(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let w = *shape.last().unwrap();
        let x = self.value();
        if x.iter().any(|v| v.is_nan()) {
            return Err(FastError::Numeric("softmax input contains NaN".into()));
        }
        let mut y = vec![T::zero(); x.len()];
        runtime::for_each_chunk(&mut y, w.max(1) * 64, |ci, chunk| {
            let base = ci * w * 64;
            for (r, row) in chunk.chunks_mut(w).enumerate() {
                let xr = &x[base + r * w..base + (r + 1) * w];
                softmax_row(xr, row);
            }
        });
        let y: Arc<Vec<T>> = Arc::new(y);
        let yb = Arc::clone(&y);
        self.tape().record(
            "softmax_lastdim",
            &[self],
            shape,
            y,
            Box::new(move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for ((gxr, gr), yr) in gx.chunks_mut(w).zip(g.chunks(w)).zip(yb.chunks(w)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in gxr.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Normalizes each last-axis row to zero mean / unit variance, then applies
    /// `gamma * x + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let w = *shape.last().unwrap();
        if gamma.shape() != [w] || beta.shape() != [w] {
            return Err(FastError::Dimension {
                op: "layer_norm",
                lhs: shape,
                rhs: gamma.shape(),
            });
        }
        let x = self.value();
        let (gm, bt) = (gamma.value(), beta.value());
        let eps = T::c(eps);
        let wn = T::from_usize_lossy(w);
        let rows = x.len() / w;
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            let xr = &x[r * w..(r + 1) * w];
            let mean = xr.iter().copied().sum::<T>() / wn;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..w {
                let h = (xr[j] - mean) * is;
                xhat[r * w + j] = h;
                y[r * w + j] = gm[j] * h + bt[j];
            }
        }
        self.tape().record(
            "layer_norm",
            &[self, gamma, beta],
            shape,
            y,
            Box::new(move |g| {
                let mut gx = vec![T::zero(); g.len()];
                let mut gg = vec![T::zero(); w];
                let mut gb = vec![T::zero(); w];
                let mut dh = vec![T::zero(); w];
                for r in 0..rows {
                    let gr = &g[r * w..(r + 1) * w];
                    let hr = &xhat[r * w..(r + 1) * w];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..w {
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                        dh[j] = gr[j] * gm[j];
                        s1 += dh[j];
                        s2 += dh[j] * hr[j];
                    }
                    let (m1, m2) = (s1 / wn, s2 / wn);
                    for j in 0..w {
                        gx[r * w + j] = inv_std[r] * (dh[j] - m1 - hr[j] * m2);
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        )
    }

    /// Inverted dropout: zeroes with probability `p`, scales survivors by
    /// `1/(1-p)`. Identity when `train` is false or `p == 0`.
    pub fn dropout(self, p: f64, rng: &mut RngState, train: bool) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(FastError::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self);
        }
        let keep = T::c(1.0 / (1.0 - p));
        let mask: Arc<Vec<T>> = Arc::new(
            (0..self.numel())
                .map(|_| if rng.uniform() < p { T::zero() } else { keep })
                .collect(),
        );
        let x = self.value();
        let y: Vec<T> = x.iter().zip(mask.iter()).map(|(&a, &m)| a * m).collect();
        self.tape().record(
            "dropout",
            &[self],
            self.shape(),
            y,
            Box::new(move |g| vec![Some(g.iter().zip(mask.iter()).map(|(&a, &m)| a * m).collect())]),
        )
    }

    /// Depthwise convolution along axis `-2` of `[..., L, C]` with `width - 1`
    /// zeros of left padding: `out[l] = bias + sum_j weight[j] * x[l - width + 1 + j]`.
    pub fn conv1d_causal(self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let ws = weight.shape();
        if shape.len() < 2 {
            return Err(FastError::Shape("conv1d input needs [.., L, C]".into()));
        }
        let (len, ch) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if ws.len() != 2 || ws[1] != ch || bias.shape() != [ch] {
            return Err(FastError::Dimension {
                op: "conv1d_causal",
                lhs: shape,
                rhs: ws,
            });
        }
        let width = ws[0];
        let (x, wt, bs) = (self.value(), weight.value(), bias.value());
        let seqs = x.len() / (len * ch);
        let mut y = vec![T::zero(); x.len()];
        for s in 0..seqs {
            let base = s * len * ch;
            for l in 0..len {
                let out = &mut y[base + l * ch..base + (l + 1) * ch];
                out.copy_from_slice(&bs);
                for j in 0..width {
                    let Some(src) = (l + j + 1).checked_sub(width) else { continue };
                    let xr = &x[base + src * ch..base + (src + 1) * ch];
                    let wr = &wt[j * ch..(j + 1) * ch];
                    for c in 0..ch {
                        out[c] += wr[c] * xr[c];
                    }
                }
            }
        }
        self.tape().record(
            "conv1d_causal",
            &[self, weight, bias],
            shape,
            y,
            Box::new(move |g| {
                let mut gx = vec![T::zero(); x.len()];
                let mut gw = vec![T::zero(); wt.len()];
                let mut gb = vec![T::zero(); ch];
                for s in 0..seqs {
                    let base = s * len * ch;
                    for l in 0..len {
                        let gr = &g[base + l * ch..base + (l + 1) * ch];
                        for c in 0..ch {
                            gb[c] += gr[c];
                        }
                        for j in 0..width {
                            let Some(src) = (l + j + 1).checked_sub(width) else { continue };
                            for c in 0..ch {
                                gw[j * ch + c] += gr[c] * x[base + src * ch + c];
                                gx[base + src * ch + c] += gr[c] * wt[j * ch + c];
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        )
    }
}

impl<T: Real> Tape<T> {
    /// Gathers rows of `table` (`[rows, d]`) at `indices`, producing
    /// `index_shape ++ [d]`. Unused rows get zero gradient.
    pub fn embedding_lookup<'t>(
        &'t self,
        table: Var<'t, T>,
        indices: &[usize],
        index_shape: &[usize],
    ) -> Result<Var<'t, T>> {
        let ts = table.shape();
        if ts.len() != 2 {
            return Err(FastError::Shape(format!("embedding table must be 2-D, got {ts:?}")));
        }
        let (rows, d) = (ts[0], ts[1]);
        if index_shape.iter().product::<usize>() != indices.len() {
            return Err(FastError::Shape("index shape does not match index count".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(FastError::Index(format!("embedding index {bad} >= table rows {rows}")));
        }
        let tv = table.value();
        let mut y = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            y.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let idx = indices.to_vec();
        let mut shape = index_shape.to_vec();
        shape.push(d);
        self.record(
            "embedding_lookup",
            &[table],
            shape,
            y,
            Box::new(move |g| {
                let mut gt = vec![T::zero(); rows * d];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g[k * d + j];
                    }
                }
                vec![Some(gt)]
            }),
        )
    }
}

/// In 64-bit the normalizer is summed in sorted order, which makes the row
/// exactly permutation-equivariant.
pub(crate) fn softmax_row<T: Real>(x: &[T], out: &mut [T]) {
    let mx = x.iter().copied().fold(T::neg_infinity(), T::max);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mx).exp_fast();
    }
    let sum = if T::DTYPE == DType::F64 {
        let mut sorted = out.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite exponentials"));
        sorted.into_iter().sum::<T>()
    } else {
        out.iter().copied().sum::<T>()
    };
    let inv = T::one() / sum;
    out.iter_mut().for_each(|o| *o *= inv);
}
