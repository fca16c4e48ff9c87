//! Fused diagonal selective scan with a hand-written reverse pass.
//!
//! For each sequence, channel `d` and state `s`:
//!
//! ```text
//! A[d,s]      = -exp(a_log[d,s])
//! abar[i,d,s] = exp(delta[i,d] * A[d,s])
//! h[i,d,s]    = abar[i,d,s] * h[i-1,d,s] + delta[i,d] * B[i,s] * u[i,d],   h[-1] = 0
//! y[i,d]      = sum_s C[i,s] * h[i,d,s] + D[d] * u[i,d]
//! ```
//!
//! Cost is `O(L * D * S)` per sequence. Sequences run in parallel; the
//! parameter gradients are reduced over fixed-size groups in index order, so
//! the result does not depend on the thread schedule.

use crate::error::{FastError, Result};
use crate::numerics::{runtime, Real, Var};

const GROUP: usize = 8;

struct Dims {
    seqs: usize,
    len: usize,
    ch: usize,
    st: usize,
}

fn check_dims<T: Real>(
    u: &Var<'_, T>,
    delta: &Var<'_, T>,
    a_log: &Var<'_, T>,
    b: &Var<'_, T>,
    c: &Var<'_, T>,
    d_skip: &Var<'_, T>,
) -> Result<Dims> {
    let us = u.shape();
    let err = |what: &str, got: Vec<usize>| FastError::Dimension {
        op: "selective_scan",
        lhs: us.clone(),
        rhs: got,
    }
    .to_string()
        + what;
    if us.len() != 3 {
        return Err(FastError::Shape(format!("scan input must be [S, L, D], got {us:?}")));
    }
    let (seqs, len, ch) = (us[0], us[1], us[2]);
    let als = a_log.shape();
    if als.len() != 2 || als[0] != ch {
        return Err(FastError::Shape(err(" (a_log)", als)));
    }
    let st = als[1];
    if delta.shape() != us {
        return Err(FastError::Shape(err(" (delta)", delta.shape())));
    }
    for (name, v) in [(" (B)", b), (" (C)", c)] {
        if v.shape() != [seqs, len, st] {
            return Err(FastError::Shape(err(name, v.shape())));
        }
    }
    if d_skip.shape() != [ch] {
        return Err(FastError::Shape(err(" (D)", d_skip.shape())));
    }
    Ok(Dims { seqs, len, ch, st })
}

#[inline(always)]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // eight fixed lanes keep the order deterministic and let the loop vectorize
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for k in 0..chunks {
        for l in 0..8 {
            lanes[l] += a[k * 8 + l] * b[k * 8 + l];
        }
    }
    let mut tail = T::zero();
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// One sequence's slices of the scan inputs.
struct SeqIn<'a, T> {
    u: &'a [T],
    delta: &'a [T],
    b: &'a [T],
    c: &'a [T],
}

/// Runs the recurrence for one sequence, writing `y` and, when `trace` is
/// given, every state `h[i]` and decay `abar[i]` (`len * ch * st` values each).
#[inline(always)]
fn forward_seq<T: Real>(
    dims: &Dims,
    x: &SeqIn<'_, T>,
    a: &[T],
    d_skip: &[T],
    y: &mut [T],
    mut trace: Option<(&mut [T], &mut [T])>,
) {
    let (len, ch, st) = (dims.len, dims.ch, dims.st);
    let mut h = vec![T::zero(); ch * st];
    for i in 0..len {
        let bi = &x.b[i * st..(i + 1) * st];
        let ci = &x.c[i * st..(i + 1) * st];
        for d in 0..ch {
            let dt = x.delta[i * ch + d];
            let xv = x.u[i * ch + d];
            let dtx = dt * xv;
            let ad = &a[d * st..(d + 1) * st];
            let hd = &mut h[d * st..(d + 1) * st];
            match trace.as_mut() {
                Some((_, abars)) => {
                    let ab = &mut abars[(i * ch + d) * st..(i * ch + d + 1) * st];
                    for s in 0..st {
                        ab[s] = (dt * ad[s]).exp_fast();
                        hd[s] = ab[s] * hd[s] + dtx * bi[s];
                    }
                }
                None => {
                    for s in 0..st {
                        hd[s] = (dt * ad[s]).exp_fast() * hd[s] + dtx * bi[s];
                    }
                }
            }
            y[i * ch + d] = dot(ci, hd) + d_skip[d] * xv;
        }
        if let Some((states, _)) = trace.as_mut() {
            states[i * ch * st..(i + 1) * ch * st].copy_from_slice(&h);
        }
    }
}

/// Per-group gradient buffers; `ga`/`gd` are partial sums over the group.
struct GroupGrads<T> {
    gu: Vec<T>,
    gdelta: Vec<T>,
    gb: Vec<T>,
    gc: Vec<T>,
    ga: Vec<T>,
    gd: Vec<T>,
}

/// Scalars shared by the eight lanes of one `(i, d)` step.
struct Coefs<T> {
    dy: T,
    dt: T,
    xv: T,
    dtx: T,
}

/// Eight state lanes of one reverse step. Operands are copied into local
/// arrays so the arithmetic is free of aliasing and vectorizes across lanes.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn lanes8<T: Real>(
    k: &Coefs<T>,
    dh: &mut [T],
    gc: &mut [T],
    ga: &mut [T],
    gb: &mut [T],
    ins: [&[T]; 6],
    g_dt: &mut [T; 8],
    g_x: &mut [T; 8],
) {
    let load = |v: &[T]| -> [T; 8] { std::array::from_fn(|l| v[l]) };
    let [c, h, hp, ab, a, b] = [load(ins[0]), load(ins[1]), load(ins[2]), load(ins[3]), load(ins[4]), load(ins[5])];
    let (mut dh8, mut gc8, mut ga8, mut gb8) = (load(dh), load(gc), load(ga), load(gb));
    let (mut gdt, mut gx) = (*g_dt, *g_x);
    for l in 0..8 {
        dh8[l] += k.dy * c[l];
        gc8[l] += k.dy * h[l];
        // d loss / d(delta * A) through abar
        let t = dh8[l] * hp[l] * ab[l];
        ga8[l] += t * k.dt;
        gdt[l] += t * a[l] + dh8[l] * b[l] * k.xv;
        gx[l] += dh8[l] * k.dt * b[l];
        gb8[l] += dh8[l] * k.dtx;
        dh8[l] *= ab[l];
    }
    dh[..8].copy_from_slice(&dh8);
    gc[..8].copy_from_slice(&gc8);
    ga[..8].copy_from_slice(&ga8);
    gb[..8].copy_from_slice(&gb8);
    (*g_dt, *g_x) = (gdt, gx);
}

/// Reverse pass for one sequence given its recomputed states and decays.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn backward_seq<T: Real>(
    dims: &Dims,
    x: &SeqIn<'_, T>,
    gy: &[T],
    a: &[T],
    d_skip: &[T],
    states: &[T],
    abars: &[T],
    dh: &mut [T],
    out: &mut GroupGrads<T>,
    k: usize,
) {
    let (len, ch, st) = (dims.len, dims.ch, dims.st);
    let (seq_x, seq_s) = (len * ch, len * st);
    let zeros = vec![T::zero(); st];
    dh.fill(T::zero());
    let gu = &mut out.gu[k * seq_x..(k + 1) * seq_x];
    let gdl = &mut out.gdelta[k * seq_x..(k + 1) * seq_x];
    let gb = &mut out.gb[k * seq_s..(k + 1) * seq_s];
    let gc = &mut out.gc[k * seq_s..(k + 1) * seq_s];
    for i in (0..len).rev() {
        let bi = &x.b[i * st..(i + 1) * st];
        let ci = &x.c[i * st..(i + 1) * st];
        let gbi = &mut gb[i * st..(i + 1) * st];
        let gci = &mut gc[i * st..(i + 1) * st];
        for d in 0..ch {
            let dy = gy[i * ch + d];
            let xv = x.u[i * ch + d];
            let dt = x.delta[i * ch + d];
            out.gd[d] += dy * xv;
            let ad = &a[d * st..(d + 1) * st];
            let row = (i * ch + d) * st;
            let hi = &states[row..row + st];
            // h[-1] = 0, so the decay term vanishes at i = 0
            let hp = if i > 0 { &states[row - ch * st..row - ch * st + st] } else { &zeros[..] };
            let abar = &abars[row..row + st];
            let dhd = &mut dh[d * st..(d + 1) * st];
            let gad = &mut out.ga[d * st..(d + 1) * st];
            let mut g_dt = [T::zero(); 8];
            let mut g_x = [T::zero(); 8];
            let dtx = dt * xv;
            let full = st / 8 * 8;
            let k = Coefs { dy, dt, xv, dtx };
            for c in (0..full).step_by(8) {
                let r = c..c + 8;
                lanes8(
                    &k,
                    &mut dhd[r.clone()],
                    &mut gci[r.clone()],
                    &mut gad[r.clone()],
                    &mut gbi[r.clone()],
                    [&ci[r.clone()], &hi[r.clone()], &hp[r.clone()], &abar[r.clone()], &ad[r.clone()], &bi[r]],
                    &mut g_dt,
                    &mut g_x,
                );
            }
            if full < st {
                // pad the tail to a full group of lanes
                let pad = |v: &[T]| -> [T; 8] { std::array::from_fn(|l| if full + l < st { v[full + l] } else { T::zero() }) };
                let (mut dh1, mut gc1, mut ga1, mut gb1) = (pad(dhd), pad(gci), pad(gad), pad(gbi));
                let ins = [pad(ci), pad(hi), pad(hp), pad(abar), pad(ad), pad(bi)];
                lanes8(
                    &k,
                    &mut dh1,
                    &mut gc1,
                    &mut ga1,
                    &mut gb1,
                    [&ins[0], &ins[1], &ins[2], &ins[3], &ins[4], &ins[5]],
                    &mut g_dt,
                    &mut g_x,
                );
                let rest = st - full;
                dhd[full..].copy_from_slice(&dh1[..rest]);
                gci[full..].copy_from_slice(&gc1[..rest]);
                gad[full..].copy_from_slice(&ga1[..rest]);
                gbi[full..].copy_from_slice(&gb1[..rest]);
            }
            let fold = |l: [T; 8]| ((l[0] + l[4]) + (l[1] + l[5])) + ((l[2] + l[6]) + (l[3] + l[7]));
            gdl[i * ch + d] = fold(g_dt);
            gu[i * ch + d] = fold(g_x) + dy * d_skip[d];
        }
    }
}

/// Dispatches the per-sequence kernels to the widest vector build the CPU
/// supports. No fused multiply-add is enabled, so every build rounds the same.
mod dispatch {
    use super::*;

    #[derive(Clone, Copy, PartialEq)]
    enum Level {
        Base,
        #[cfg(target_arch = "x86_64")]
        Avx2,
        #[cfg(target_arch = "x86_64")]
        Avx512,
    }

    fn level() -> Level {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") {
                return Level::Avx512;
            }
            if std::is_x86_feature_detected!("avx2") {
                return Level::Avx2;
            }
        }
        Level::Base
    }

    macro_rules! builds {
        ($feature:literal, $fwd:ident, $bwd:ident) => {
            #[cfg(target_arch = "x86_64")]
            #[target_feature(enable = $feature)]
            unsafe fn $fwd<T: Real>(
                dims: &Dims,
                x: &SeqIn<'_, T>,
                a: &[T],
                d_skip: &[T],
                y: &mut [T],
                trace: Option<(&mut [T], &mut [T])>,
            ) {
                forward_seq(dims, x, a, d_skip, y, trace)
            }

            #[cfg(target_arch = "x86_64")]
            #[allow(clippy::too_many_arguments)]
            #[target_feature(enable = $feature)]
            unsafe fn $bwd<T: Real>(
                dims: &Dims,
                x: &SeqIn<'_, T>,
                gy: &[T],
                a: &[T],
                d_skip: &[T],
                states: &[T],
                abars: &[T],
                dh: &mut [T],
                out: &mut GroupGrads<T>,
                k: usize,
            ) {
                backward_seq(dims, x, gy, a, d_skip, states, abars, dh, out, k)
            }
        };
    }

    builds!("avx2", forward_avx2, backward_avx2);
    builds!("avx512f", forward_avx512, backward_avx512);

    pub(super) fn forward<T: Real>(
        dims: &Dims,
        x: &SeqIn<'_, T>,
        a: &[T],
        d_skip: &[T],
        y: &mut [T],
        trace: Option<(&mut [T], &mut [T])>,
    ) {
        // SAFETY: each build runs only when its feature was detected
        match level() {
            #[cfg(target_arch = "x86_64")]
            Level::Avx512 => unsafe { forward_avx512(dims, x, a, d_skip, y, trace) },
            #[cfg(target_arch = "x86_64")]
            Level::Avx2 => unsafe { forward_avx2(dims, x, a, d_skip, y, trace) },
            Level::Base => forward_seq(dims, x, a, d_skip, y, trace),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn backward<T: Real>(
        dims: &Dims,
        x: &SeqIn<'_, T>,
        gy: &[T],
        a: &[T],
        d_skip: &[T],
        states: &[T],
        abars: &[T],
        dh: &mut [T],
        out: &mut GroupGrads<T>,
        k: usize,
    ) {
        // SAFETY: each build runs only when its feature was detected
        match level() {
            #[cfg(target_arch = "x86_64")]
            Level::Avx512 => unsafe { backward_avx512(dims, x, gy, a, d_skip, states, abars, dh, out, k) },
            #[cfg(target_arch = "x86_64")]
            Level::Avx2 => unsafe { backward_avx2(dims, x, gy, a, d_skip, states, abars, dh, out, k) },
            Level::Base => backward_seq(dims, x, gy, a, d_skip, states, abars, dh, out, k),
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Selective scan over axis 1 of `self = u [S, L, D]` with `delta [S, L, D]`,
    /// `a_log [D, N]`, `b, c [S, L, N]` and direct term `d_skip [D]`.
    pub fn selective_scan(
        self,
        delta: Var<'t, T>,
        a_log: Var<'t, T>,
        b: Var<'t, T>,
        c: Var<'t, T>,
        d_skip: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let dims = check_dims(&self, &delta, &a_log, &b, &c, &d_skip)?;
        let (u_v, dl_v, al_v, b_v, c_v, ds_v) = (
            self.value(),
            delta.value(),
            a_log.value(),
            b.value(),
            c.value(),
            d_skip.value(),
        );
        let a: Vec<T> = al_v.iter().map(|&v| -v.exp()).collect();
        let (len, ch, st) = (dims.len, dims.ch, dims.st);
        let seq_x = len * ch;
        let seq_s = len * st;

        let mut y = vec![T::zero(); dims.seqs * seq_x];
        runtime::for_each_chunk(&mut y, seq_x, |s, ys| {
            let x = SeqIn {
                u: &u_v[s * seq_x..(s + 1) * seq_x],
                delta: &dl_v[s * seq_x..(s + 1) * seq_x],
                b: &b_v[s * seq_s..(s + 1) * seq_s],
                c: &c_v[s * seq_s..(s + 1) * seq_s],
            };
            dispatch::forward(&dims, &x, &a, &ds_v, ys, None);
        });

        let tape = self.tape();
        tape.record(
            "selective_scan",
            &[self, delta, a_log, b, c, d_skip],
            vec![dims.seqs, len, ch],
            y,
            Box::new(move |gy| {
                let seq = |s: usize| SeqIn {
                    u: &u_v[s * seq_x..(s + 1) * seq_x],
                    delta: &dl_v[s * seq_x..(s + 1) * seq_x],
                    b: &b_v[s * seq_s..(s + 1) * seq_s],
                    c: &c_v[s * seq_s..(s + 1) * seq_s],
                };
                let groups = dims.seqs.div_ceil(GROUP);
                let run_group = |g: usize| -> GroupGrads<T> {
                    let lo = g * GROUP;
                    let hi = (lo + GROUP).min(dims.seqs);
                    let n = hi - lo;
                    let mut out = GroupGrads {
                        gu: vec![T::zero(); n * seq_x],
                        gdelta: vec![T::zero(); n * seq_x],
                        gb: vec![T::zero(); n * seq_s],
                        gc: vec![T::zero(); n * seq_s],
                        ga: vec![T::zero(); ch * st],
                        gd: vec![T::zero(); ch],
                    };
                    let mut states = vec![T::zero(); len * ch * st];
                    let mut abars = vec![T::zero(); len * ch * st];
                    let mut scratch_y = vec![T::zero(); seq_x];
                    let mut dh = vec![T::zero(); ch * st];
                    for (k, s) in (lo..hi).enumerate() {
                        let x = seq(s);
                        let gys = &gy[s * seq_x..(s + 1) * seq_x];
                        dispatch::forward(&dims, &x, &a, &ds_v, &mut scratch_y, Some((&mut states, &mut abars)));
                        dispatch::backward(&dims, &x, gys, &a, &ds_v, &states, &abars, &mut dh, &mut out, k);
                    }
                    out
                };
                let parts: Vec<GroupGrads<T>> = if runtime::deterministic() {
                    (0..groups).map(run_group).collect()
                } else {
                    use rayon::prelude::*;
                    (0..groups).into_par_iter().map(run_group).collect()
                };

                let mut gu = Vec::with_capacity(dims.seqs * seq_x);
                let mut gdelta = Vec::with_capacity(dims.seqs * seq_x);
                let mut gb = Vec::with_capacity(dims.seqs * seq_s);
                let mut gc = Vec::with_capacity(dims.seqs * seq_s);
                let mut ga = vec![T::zero(); ch * st];
                let mut gd = vec![T::zero(); ch];
                for p in parts {
                    gu.extend_from_slice(&p.gu);
                    gdelta.extend_from_slice(&p.gdelta);
                    gb.extend_from_slice(&p.gb);
                    gc.extend_from_slice(&p.gc);
                    ga.iter_mut().zip(&p.ga).for_each(|(x, &v)| *x += v);
                    gd.iter_mut().zip(&p.gd).for_each(|(x, &v)| *x += v);
                }
                // chain through A = -exp(a_log): dA/da_log = A
                let g_alog: Vec<T> = ga.iter().zip(&a).map(|(&g, &av)| g * av).collect();
                vec![Some(gu), Some(gdelta), Some(g_alog), Some(gb), Some(gc), Some(gd)]
            }),
        )
    }
}
