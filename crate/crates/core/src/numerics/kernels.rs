//! Index plumbing shared by the differentiable ops: broadcasting, strided
//! copies and batched matrix products over row-major buffers.

use super::real::Real;
use super::runtime;
use super::tensor::numel;

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        st[i] = acc;
        acc *= shape[i];
    }
    st
}

/// Strides for reading `src_shape` as if broadcast to `out_shape` (zero where
/// an axis is repeated).
fn broadcast_strides(src_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let pad = nd - src_shape.len();
    let src_st = row_major_strides(src_shape);
    (0..nd)
        .map(|i| {
            if i < pad || src_shape[i - pad] == 1 {
                0
            } else {
                src_st[i - pad]
            }
        })
        .collect()
}

/// Walks `out_shape` one innermost row at a time, calling `f(out_row_start,
/// src_offset)` where `src_offset` is the source position of the row's first
/// element under `src_strides`.
fn for_each_row(out_shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = out_shape.len();
    if nd == 0 {
        f(0, 0);
        return;
    }
    let last = out_shape[nd - 1];
    let rows = numel(out_shape) / last.max(1);
    let mut idx = vec![0usize; nd.saturating_sub(1)];
    let mut src = 0usize;
    for r in 0..rows {
        f(r * last, src);
        // odometer over the outer axes
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

pub fn expand<T: Copy + Default>(src: &[T], src_shape: &[usize], out_shape: &[usize]) -> Vec<T> {
    if src_shape == out_shape {
        return src.to_vec();
    }
    let st = broadcast_strides(src_shape, out_shape);
    let last = *out_shape.last().unwrap_or(&1);
    let inner = *st.last().unwrap_or(&0);
    let mut out = vec![T::default(); numel(out_shape)];
    for_each_row(out_shape, &st, |o, s| {
        let row = &mut out[o..o + last];
        if inner == 1 {
            row.copy_from_slice(&src[s..s + last]);
        } else {
            row.fill(src[s]);
        }
    });
    out
}

/// Sums `g` (shaped `g_shape`) down to the broadcast source `target_shape`.
pub fn reduce_to<T: Real>(g: &[T], g_shape: &[usize], target_shape: &[usize]) -> Vec<T> {
    if g_shape == target_shape {
        return g.to_vec();
    }
    let st = broadcast_strides(target_shape, g_shape);
    let last = *g_shape.last().unwrap_or(&1);
    let inner = *st.last().unwrap_or(&0);
    let mut out = vec![T::zero(); numel(target_shape)];
    for_each_row(g_shape, &st, |o, s| {
        let row = &g[o..o + last];
        if inner == 1 {
            out[s..s + last]
                .iter_mut()
                .zip(row)
                .for_each(|(a, &b)| *a += b);
        } else {
            let mut acc = T::zero();
            for &v in row {
                acc += v;
            }
            out[s] += acc;
        }
    });
    out
}

/// Copies `src` into the axis order given by `perm` (out axis `i` = in axis
/// `perm[i]`).
pub fn permute<T: Copy + Default>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_st = row_major_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let st: Vec<usize> = perm.iter().map(|&p| in_st[p]).collect();
    let last = *out_shape.last().unwrap_or(&1);
    let inner = *st.last().unwrap_or(&1);
    let mut out = vec![T::default(); src.len()];
    for_each_row(&out_shape, &st, |o, s| {
        let row = &mut out[o..o + last];
        if inner == 1 {
            row.copy_from_slice(&src[s..s + last]);
        } else {
            for (j, v) in row.iter_mut().enumerate() {
                *v = src[s + j * inner];
            }
        }
    });
    out
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Row-major `m x k` operand, optionally read transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// View the stored `rows x cols` matrix as its transpose.
    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out (+)= a * b` for logical shapes `m x k` and `k x n`.
pub fn gemm_into<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: &mut [T], accumulate: bool) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner extents");
    assert_eq!(out.len(), m * n, "gemm output extent");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            out.fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents checked above; `out` is an exclusive borrow distinct from
    // the shared operands.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batch offsets for a batched matmul: for each output batch element, the
/// element index into `a`'s and `b`'s batch axes.
pub fn batch_pairs(a_batch: &[usize], b_batch: &[usize], out_batch: &[usize]) -> Vec<(usize, usize)> {
    let sa = broadcast_strides(a_batch, out_batch);
    let sb = broadcast_strides(b_batch, out_batch);
    let total = numel(out_batch);
    let mut pairs = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_batch.len()];
    for _ in 0..total {
        let ia: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ib: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        pairs.push((ia, ib));
        for ax in (0..out_batch.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_batch[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    pairs
}

/// Batched `out[i] = a[pa(i)] * b[pb(i)]`, parallel over the output batch.
pub fn batched_gemm<T: Real>(
    a: &[T],
    a_mat: (usize, usize, bool),
    b: &[T],
    b_mat: (usize, usize, bool),
    pairs: &[(usize, usize)],
    out: &mut [T],
    out_mat: (usize, usize),
) {
    let a_sz = a_mat.0 * a_mat.1;
    let b_sz = b_mat.0 * b_mat.1;
    let o_sz = out_mat.0 * out_mat.1;
    runtime::for_each_chunk(out, o_sz, |i, chunk| {
        let (ia, ib) = pairs[i];
        let am = MatRef {
            data: &a[ia * a_sz..(ia + 1) * a_sz],
            rows: a_mat.0,
            cols: a_mat.1,
            transposed: a_mat.2,
        };
        let bm = MatRef {
            data: &b[ib * b_sz..(ib + 1) * b_sz],
            rows: b_mat.0,
            cols: b_mat.1,
            transposed: b_mat.2,
        };
        gemm_into(am, bm, chunk, false);
    });
}
