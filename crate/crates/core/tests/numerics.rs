//! Properties of the tensor ops beyond their gradients.

use fast_core::numerics::{init, RngState, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, RngState::new(seed).normal_vec(n, 2.0)).unwrap()
}

fn shape_strategy() -> impl Strategy<Value = (usize, usize)> {
    (1usize..6, 1usize..9)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one((rows, cols) in shape_strategy(), seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut x = tensor(&[rows, cols], seed);
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
        let tape = Tape::no_grad();
        let y = tape.leaf(&x).softmax_lastdim().unwrap().to_tensor();
        for r in y.data().chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn softmax_is_permutation_equivariant((rows, cols) in shape_strategy(), seed in any::<u64>(), perm_seed in any::<u64>()) {
        let x = tensor(&[rows, cols], seed);
        let mut perm: Vec<usize> = (0..cols).collect();
        RngState::new(perm_seed).shuffle(&mut perm);
        let permuted: Vec<f64> = x.data().chunks(cols).flat_map(|r| perm.iter().map(|&j| r[j]).collect::<Vec<_>>()).collect();
        let tape = Tape::no_grad();
        let a = tape.leaf(&x).softmax_lastdim().unwrap().to_tensor();
        let b = tape.leaf(&Tensor::new(&[rows, cols], permuted).unwrap()).softmax_lastdim().unwrap().to_tensor();
        for (ra, rb) in a.data().chunks(cols).zip(b.data().chunks(cols)) {
            for (k, &j) in perm.iter().enumerate() {
                prop_assert_eq!(rb[k].to_bits(), ra[j].to_bits());
            }
        }
    }

    #[test]
    fn identity_kernel_conv_is_identity(len in 1usize..10, ch in 1usize..6, width in 1usize..4, seed in any::<u64>()) {
        let x = tensor(&[2, len, ch], seed);
        let mut w = vec![0.0; width * ch];
        w[(width - 1) * ch..].fill(1.0);
        let tape = Tape::no_grad();
        let y = tape
            .leaf(&x)
            .conv1d_causal(tape.leaf(&Tensor::new(&[width, ch], w).unwrap()), tape.leaf(&Tensor::zeros(&[ch])))
            .unwrap()
            .to_tensor();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_is_causal(len in 2usize..10, ch in 1usize..4, seed in any::<u64>(), at in 0usize..10) {
        let at = at % len;
        let x = tensor(&[1, len, ch], seed);
        let mut x2 = x.clone();
        x2.data_mut()[at * ch] += 1.0;
        let w = tensor(&[3, ch], seed ^ 1);
        let b = tensor(&[ch], seed ^ 2);
        let tape = Tape::no_grad();
        let run = |x: &Tensor<f64>| tape.leaf(x).conv1d_causal(tape.leaf(&w), tape.leaf(&b)).unwrap().to_tensor();
        let (y, y2) = (run(&x), run(&x2));
        prop_assert_eq!(&y.data()[..at * ch], &y2.data()[..at * ch]);
    }

    #[test]
    fn matmul_matches_naive(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let a = tensor(&[m, k], seed);
        let b = tensor(&[k, n], seed ^ 3);
        let tape = Tape::no_grad();
        let c = tape.leaf(&a).matmul(tape.leaf(&b)).unwrap().to_tensor();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum();
                prop_assert!((c.data()[i * n + j] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn permute_round_trips(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let x = tensor(&[2, 3, 4, 5], seed);
        let mut perm: Vec<usize> = (0..4).collect();
        RngState::new(perm_seed).shuffle(&mut perm);
        let mut inv = vec![0; 4];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let tape = Tape::no_grad();
        let y = tape.leaf(&x).permute(&perm).unwrap().permute(&inv).unwrap().to_tensor();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn layer_norm_rows_are_standardized(rows in 1usize..5, cols in 2usize..12, seed in any::<u64>()) {
        let x = tensor(&[rows, cols], seed);
        let tape = Tape::no_grad();
        let y = tape
            .leaf(&x)
            .layer_norm(tape.leaf(&init::ones(&[cols])), tape.leaf(&init::zeros(&[cols])), 1e-9)
            .unwrap()
            .to_tensor();
        let moments = |r: &[f64]| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            (mean, r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64)
        };
        for (r, xr) in y.data().chunks(cols).zip(x.data().chunks(cols)) {
            let (mean, var) = moments(r);
            let (_, var_in) = moments(xr);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - var_in / (var_in + 1e-9)).abs() < 1e-6);
        }
    }
}

#[test]
fn dropout_is_seeded() {
    let x = tensor(&[8, 8], 1);
    let tape = Tape::no_grad();
    let run = |seed| {
        tape.leaf(&x)
            .dropout(0.3, &mut RngState::new(seed), true)
            .unwrap()
            .to_tensor()
    };
    assert_eq!(run(4).data(), run(4).data());
    assert_ne!(run(4).data(), run(5).data());
    // inverted scaling: survivors are x / (1 - p)
    for (y, x) in run(4).data().iter().zip(x.data()) {
        assert!(*y == 0.0 || (y - x / 0.7).abs() < 1e-12);
    }
    let eval = tape.leaf(&x).dropout(0.3, &mut RngState::new(4), false).unwrap().to_tensor();
    assert_eq!(eval.data(), x.data());
}

#[test]
fn initialization_is_seeded() {
    let a: Tensor<f32> = init::fan_in_uniform(&[64, 16], &mut RngState::new(9));
    let b: Tensor<f32> = init::fan_in_uniform(&[64, 16], &mut RngState::new(9));
    assert_eq!(a.data(), b.data());
    let bound = 1.0 / 64f32.sqrt();
    assert!(a.data().iter().all(|v| v.abs() <= bound));
    let z: Tensor<f32> = init::zeros(&[4]);
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn split_streams_are_independent_and_stable() {
    let root = RngState::new(21);
    let draw = |mut r: RngState| (0..4).map(|_| r.next_u64()).collect::<Vec<_>>();
    assert_eq!(draw(root.split(0)), draw(root.split(0)));
    assert_ne!(draw(root.split(0)), draw(root.split(1)));
}

#[test]
fn non_finite_values_are_numeric_errors() {
    let tape = Tape::<f64>::no_grad();
    let x = tape.leaf(&Tensor::new(&[2], vec![800.0, 1.0]).unwrap());
    assert!(matches!(x.exp(), Err(fast_core::FastError::Numeric(_))));
}
