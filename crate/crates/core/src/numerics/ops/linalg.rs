use crate::error::{FastError, Result};
use crate::numerics::kernels::{batch_pairs, batched_gemm, broadcast_shape, gemm_into, MatRef};
use crate::numerics::real::Real;
use crate::numerics::tape::Var;
use crate::numerics::tensor::numel;

impl<'t, T: Real> Var<'t, T> {
    /// `[..., m, k] x [..., k, n] -> [..., m, n]` with broadcast batch axes. A
    /// 1-D operand on either side is not accepted; reshape first.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let dim_err = || FastError::Dimension {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dim_err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(dim_err());
        }
        let a_batch = sa[..sa.len() - 2].to_vec();
        let b_batch = sb[..sb.len() - 2].to_vec();
        let out_batch = broadcast_shape(&a_batch, &b_batch).ok_or_else(dim_err)?;
        let mut out_shape = out_batch.clone();
        out_shape.extend([m, n]);

        let (a, b) = (self.value(), rhs.value());

        // right operand shared by every batch element: one tall gemm
        if b_batch.is_empty() || numel(&b_batch) == 1 && a_batch.len() >= b_batch.len() {
            let rows = numel(&a_batch) * m;
            let mut out = vec![T::zero(); rows * n];
            gemm_into(MatRef::new(&a, rows, k), MatRef::new(&b, k, n), &mut out, false);
            return self.tape().record(
                "matmul",
                &[self, rhs],
                out_shape,
                out,
                Box::new(move |g| {
                    let mut ga = vec![T::zero(); rows * k];
                    gemm_into(MatRef::new(g, rows, n), MatRef::new(&b, k, n).t(), &mut ga, false);
                    let mut gb = vec![T::zero(); k * n];
                    gemm_into(MatRef::new(&a, rows, k).t(), MatRef::new(g, rows, n), &mut gb, false);
                    vec![Some(ga), Some(gb)]
                }),
            );
        }

        let pairs = batch_pairs(&a_batch, &b_batch, &out_batch);
        let mut out = vec![T::zero(); numel(&out_shape)];
        batched_gemm(&a, (m, k, false), &b, (k, n, false), &pairs, &mut out, (m, n));
        let a_full = numel(&a_batch) == pairs.len();
        let b_full = numel(&b_batch) == pairs.len();
        self.tape().record(
            "matmul",
            &[self, rhs],
            out_shape,
            out,
            Box::new(move |g| {
                let mut ga = vec![T::zero(); a.len()];
                let mut gb = vec![T::zero(); b.len()];
                if a_full {
                    // dA_i = dC_i B_i^T, one disjoint slice per batch element
                    batched_gemm(g, (m, n, false), &b, (k, n, true), &keyed_by_a(&pairs), &mut ga, (m, k));
                } else {
                    for (i, &(ia, ib)) in pairs.iter().enumerate() {
                        gemm_into(
                            MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n),
                            MatRef::new(&b[ib * k * n..(ib + 1) * k * n], k, n).t(),
                            &mut ga[ia * m * k..(ia + 1) * m * k],
                            true,
                        );
                    }
                }
                if b_full {
                    batched_gemm(&a, (m, k, true), g, (m, n, false), &keyed_by_b(&pairs), &mut gb, (k, n));
                } else {
                    for (i, &(ia, ib)) in pairs.iter().enumerate() {
                        gemm_into(
                            MatRef::new(&a[ia * m * k..(ia + 1) * m * k], m, k).t(),
                            MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n),
                            &mut gb[ib * k * n..(ib + 1) * k * n],
                            true,
                        );
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// `x W + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let y = self.matmul(w)?;
        match b {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

/// For `dA`: slot `ia` is produced from grad slot `i` and `b` slot `ib`. Only
/// valid when `a` is not broadcast, so `ia` is a bijection.
fn keyed_by_a(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); pairs.len()];
    for (i, &(ia, ib)) in pairs.iter().enumerate() {
        out[ia] = (i, ib);
    }
    out
}

/// For `dB`: slot `ib` comes from `a` slot `ia` and grad slot `i`.
fn keyed_by_b(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); pairs.len()];
    for (i, &(ia, ib)) in pairs.iter().enumerate() {
        out[ib] = (ia, i);
    }
    out
}
