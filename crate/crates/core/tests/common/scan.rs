//! Sequential selective-scan oracle, one scalar at a time.

use fast_core::numerics::{softplus, RngState, Tape, Tensor};

/// Direct transcription of the recurrence.
pub fn naive_scan(
    (l, dch, ds): (usize, usize, usize),
    u: &[f64],
    delta: &[f64],
    a_log: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
) -> Vec<f64> {
    let mut h = vec![vec![0.0; ds]; dch];
    let mut y = vec![0.0; l * dch];
    for i in 0..l {
        for ch in 0..dch {
            let mut acc = d[ch] * u[i * dch + ch];
            for s in 0..ds {
                let a = -a_log[ch * ds + s].exp();
                let abar = (delta[i * dch + ch] * a).exp();
                let bbar = delta[i * dch + ch] * b[i * ds + s];
                h[ch][s] = abar * h[ch][s] + bbar * u[i * dch + ch];
                acc += c[i * ds + s] * h[ch][s];
            }
            y[i * dch + ch] = acc;
        }
    }
    y
}

/// The library scan on one sequence.
pub fn run_scan(l: usize, dch: usize, ds: usize, parts: [&[f64]; 6]) -> Vec<f64> {
    let tape = Tape::<f64>::no_grad();
    let [u, dl, al, b, c, d] = parts;
    let v = |s: &[usize], x: &[f64]| tape.leaf(&Tensor::new(s, x.to_vec()).unwrap());
    let y = v(&[1, l, dch], u)
        .selective_scan(
            v(&[1, l, dch], dl),
            v(&[dch, ds], al),
            v(&[1, l, ds], b),
            v(&[1, l, ds], c),
            v(&[dch], d),
        )
        .unwrap();
    y.value().to_vec()
}

/// Worst absolute deviation between library and oracle over random
/// instances with `L <= 64`, `d_h <= 32`, `d_s <= 16`.
pub fn worst_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let l = 1 + rng.below(64);
        let dch = 1 + rng.below(32);
        let ds = 1 + rng.below(16);
        let u: Vec<f64> = rng.normal_vec(l * dch, 1.0);
        let dl: Vec<f64> = (0..l * dch).map(|_| softplus(rng.normal())).collect();
        let al: Vec<f64> = rng.uniform_vec(dch * ds, -1.0, 2.0);
        let b: Vec<f64> = rng.normal_vec(l * ds, 1.0);
        let c: Vec<f64> = rng.normal_vec(l * ds, 1.0);
        let d: Vec<f64> = rng.normal_vec(dch, 1.0);
        let fast = run_scan(l, dch, ds, [&u, &dl, &al, &b, &c, &d]);
        let slow = naive_scan((l, dch, ds), &u, &dl, &al, &b, &c, &d);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
