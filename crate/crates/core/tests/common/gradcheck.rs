//! Central finite-difference oracle. Uses only forward evaluation, so it is
//! independent of every backward rule it checks.

use fast_core::numerics::{RngState, Tape, Tensor, Var};
use fast_core::params::Parameterized;
use fast_core::Result;

pub const STEP: f64 = 1e-5;

/// Relative error of one gradient pair: `|a - n| / (|a| + |n|)` in the 2-norm,
/// falling back to the absolute difference when both are ~0.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
        + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Checks `f` at `inputs` by contracting its output against a fixed random
/// tensor. Returns the worst relative error across inputs.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let probe = {
        let tape = Tape::<f64>::no_grad();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&tape, &vars).expect("forward");
        let mut rng = RngState::new(0xC0FFEE);
        Tensor::new(&out.shape(), rng.normal_vec(out.numel(), 1.0)).unwrap()
    };
    let loss_of = |ins: &[Tensor<f64>]| -> f64 {
        let tape = Tape::<f64>::no_grad();
        let vars: Vec<_> = ins.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&tape, &vars).expect("forward");
        out.value().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let tracked: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let tape = Tape::<f64>::new();
    let vars: Vec<_> = tracked.iter().map(|t| tape.param(t)).collect();
    let out = f(&tape, &vars).expect("forward");
    let p = tape.leaf(&probe);
    let loss = out.mul(p).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, t) in tracked.iter().enumerate() {
        let analytic = grads.of(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        let numeric: Vec<f64> = (0..t.numel())
            .map(|j| {
                let mut plus: Vec<Tensor<f64>> = inputs.to_vec();
                plus[i].data_mut()[j] += STEP;
                let mut minus: Vec<Tensor<f64>> = inputs.to_vec();
                minus[i].data_mut()[j] -= STEP;
                (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP)
            })
            .collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = RngState::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape, rng.normal_vec(n, 1.0)).unwrap()
}

pub fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = RngState::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape, rng.uniform_vec(n, 0.5, 1.5)).unwrap()
}

/// Like [`check`] but over an input tensor plus every parameter of `module`,
/// reporting the relative error of the concatenated gradient vector.
pub fn check_module<M, F>(module: &M, input: &Tensor<f64>, f: F) -> f64
where
    M: Parameterized<f64> + Clone,
    F: for<'t> Fn(&M, &'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let probe = {
        let tape = Tape::<f64>::no_grad();
        let out = f(module, &tape, tape.leaf(input)).expect("forward");
        let mut rng = RngState::new(0xC0FFEE);
        Tensor::new(&out.shape(), rng.normal_vec(out.numel(), 1.0)).unwrap()
    };
    let loss_of = |m: &M, x: &Tensor<f64>| -> f64 {
        let tape = Tape::<f64>::no_grad();
        let out = f(m, &tape, tape.leaf(x)).expect("forward");
        out.value().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let x = input.clone().with_grad();
    let tape = Tape::<f64>::new();
    let xv = tape.param(&x);
    let out = f(module, &tape, xv).expect("forward");
    let loss = out.mul(tape.leaf(&probe)).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut analytic: Vec<f64> = grads.of(&x).unwrap().to_vec();
    let mut numeric = Vec::new();
    for j in 0..input.numel() {
        let (mut p, mut m) = (input.clone(), input.clone());
        p.data_mut()[j] += STEP;
        m.data_mut()[j] -= STEP;
        numeric.push((loss_of(module, &p) - loss_of(module, &m)) / (2.0 * STEP));
    }
    for (name, t) in module.named_params() {
        let g = grads.of(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        analytic.extend(g);
        for j in 0..t.numel() {
            let nudged = |delta: f64| {
                let mut m = module.clone();
                m.visit_mut("", &mut |n, p| {
                    if n == name {
                        p.data_mut()[j] += delta;
                    }
                });
                loss_of(&m, input)
            };
            numeric.push((nudged(STEP) - nudged(-STEP)) / (2.0 * STEP));
        }
    }
    relative_error(&analytic, &numeric)
}
