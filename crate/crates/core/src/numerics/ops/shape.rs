use crate::error::{FastError, Result};
use crate::numerics::kernels::{broadcast_shape, expand, inverse_permutation, permute, reduce_to};
use crate::numerics::real::Real;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::numel;

impl<'t, T: Real> Var<'t, T> {
    /// Reinterprets the extents; shares storage with the input.
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let cur = self.shape();
        if numel(shape) != numel(&cur) || shape.contains(&0) {
            return Err(FastError::Dimension {
                op: "reshape",
                lhs: cur,
                rhs: shape.to_vec(),
            });
        }
        Ok(self.tape().record_shared(self, shape.to_vec(), self.value()))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm
                .iter()
                .all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(FastError::Shape(format!(
                "invalid permutation {perm:?} for shape {shape:?}"
            )));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self);
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let value = permute(&self.value(), &shape, perm);
        let inv = inverse_permutation(perm);
        let os = out_shape.clone();
        self.tape().record(
            "permute",
            &[self],
            out_shape,
            value,
            Box::new(move |g| vec![Some(permute(g, &os, &inv))]),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(FastError::Shape("transpose needs at least 2 axes".into()));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    /// Repeats along broadcast axes to reach `shape`.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let cur = self.shape();
        match broadcast_shape(&cur, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(FastError::Dimension {
                    op: "broadcast_to",
                    lhs: cur,
                    rhs: shape.to_vec(),
                })
            }
        }
        if cur == shape {
            return Ok(self);
        }
        let value = expand(&self.value(), &cur, shape);
        let os = shape.to_vec();
        self.tape().record(
            "broadcast_to",
            &[self],
            shape.to_vec(),
            value,
            Box::new(move |g| vec![Some(reduce_to(g, &os, &cur))]),
        )
    }
}

impl<T: Real> Tape<T> {
    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat_lastdim<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| FastError::Shape("concat of zero tensors".into()))?
            .shape();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(FastError::Dimension {
                    op: "concat_lastdim",
                    lhs: first.clone(),
                    rhs: s,
                });
            }
            widths.push(*s.last().unwrap());
        }
        let rows = numel(lead);
        let total: usize = widths.iter().sum();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                out.extend_from_slice(&v[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.record(
            "concat_lastdim",
            parts,
            shape,
            out,
            Box::new(move |g| {
                let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (gp, &w) in grads.iter_mut().zip(&widths) {
                        gp.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        )
    }
}
