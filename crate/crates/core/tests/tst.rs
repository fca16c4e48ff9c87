mod common;

use common::gradcheck::{check_module, random};
use common::scan::{run_scan, worst_deviation};
use fast_core::model::{BlockVariant, ModelConfig};
use fast_core::numerics::{RngState, Tape, Tensor};
use fast_core::params::ForwardCtx;
use fast_core::tst::{SpatialSsm, SsmMixer, TemporalAttention, TstBlock};

#[test]
fn scan_matches_sequential_oracle() {
    let worst = worst_deviation(100, 2024);
    assert!(worst <= 1e-5, "max abs deviation {worst:e}");
}

#[test]
fn scan_single_step_by_hand() {
    // L = 1, one channel, two states: y = sum_s C_s * delta * B_s * u + D * u
    let (u, dl, b, c, d) = (2.0, 0.5, [1.0, -3.0], [0.25, 2.0], 1.5);
    let y = run_scan(1, 1, 2, [&[u], &[dl], &[0.0, 1.0], &b, &c, &[d]]);
    let expected = 0.25 * 0.5 * 1.0 * 2.0 + 2.0 * 0.5 * -3.0 * 2.0 + 1.5 * 2.0;
    assert!((y[0] - expected).abs() < 1e-12, "{} vs {expected}", y[0]);
}

#[test]
fn zero_step_size_reduces_to_direct_path() {
    let mut rng = RngState::new(3);
    let width = 6;
    let mut mixer = SsmMixer::<f64>::new(width, 4, 2, &mut rng);
    mixer.b_delta.data_mut().fill(-30.0);
    let tape = Tape::<f64>::no_grad();
    let x = tape.leaf(&random(&[2, 5, width], 9));
    let u = x.matmul(tape.leaf(&mixer.w_u)).unwrap();
    let delta = u
        .linear(tape.leaf(&mixer.w_delta), Some(tape.leaf(&mixer.b_delta)))
        .unwrap()
        .softplus()
        .unwrap();
    let b = u.matmul(tape.leaf(&mixer.w_b)).unwrap();
    let c = u.matmul(tape.leaf(&mixer.w_c)).unwrap();
    let s = u
        .selective_scan(delta, tape.leaf(&mixer.a_log), b, c, tape.leaf(&mixer.d_skip))
        .unwrap();
    let (sv, uv, dv) = (s.value(), u.value(), mixer.d_skip.data().to_vec());
    for (k, (&y, &x)) in sv.iter().zip(uv.iter()).enumerate() {
        assert!((y - dv[k % width] * x).abs() < 1e-9, "at {k}: {y} vs {}", dv[k % width] * x);
    }
}

#[test]
fn scan_stays_finite_on_long_sequences() {
    let mut rng = RngState::new(4);
    let l = 2000;
    let u = rng.normal_vec(l * 2, 10.0);
    let dl = rng.uniform_vec(l * 2, 0.0, 5.0);
    let al = rng.uniform_vec(8, -3.0, 3.0);
    let b = rng.normal_vec(l * 4, 1.0);
    let c = rng.normal_vec(l * 4, 1.0);
    let y = run_scan(l, 2, 4, [&u, &dl, &al, &b, &c, &[1.0, 1.0]]);
    assert!(y.iter().all(|v| v.is_finite()));
}

fn tiny(variant: BlockVariant) -> ModelConfig {
    ModelConfig {
        n_sensors: 3,
        t_hist: 4,
        d: 8,
        use_embedding: false,
        heads: 2,
        d_state: 4,
        variant,
        dropout: 0.0,
        ..Default::default()
    }
}

#[test]
fn full_block_gradient_matches_finite_differences() {
    let cfg = tiny(BlockVariant::Fast);
    assert_eq!(cfg.d_hidden(), 8);
    let block = TstBlock::<f64>::new(&cfg, &mut RngState::new(11));
    let x = random(&[1, 4, 3, 8], 12);
    let err = check_module(&block, &x, |b, tape, h| b.forward(tape, h, &mut ForwardCtx::eval()));
    assert!(err <= 1e-3, "relative error {err:e}");
}

#[test]
fn blocks_preserve_shape() {
    for v in BlockVariant::ALL {
        let cfg = tiny(v);
        let block = TstBlock::<f64>::new(&cfg, &mut RngState::new(1));
        let tape = Tape::<f64>::no_grad();
        let x = tape.leaf(&random(&[2, 4, 3, 8], 2));
        let y = block.forward(&tape, x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 3, 8], "{v}");
    }
}

fn forward_attn(att: &TemporalAttention<f64>, x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let tape = Tape::<f64>::no_grad();
    let (y, w) = att
        .forward_with_weights(&tape, tape.leaf(x), &mut ForwardCtx::eval())
        .unwrap();
    (y.value().to_vec(), w.value().to_vec())
}

/// Indices `(b, t, n, d)` of the outputs that differ between two runs.
fn changed(a: &[f64], b: &[f64], shape: [usize; 4]) -> Vec<[usize; 4]> {
    let [_, t, n, d] = shape;
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(k, _)| [k / (t * n * d), (k / (n * d)) % t, (k / d) % n, k % d])
        .collect()
}

#[test]
fn temporal_attention_never_mixes_nodes() {
    let shape = [1, 5, 4, 8];
    let att = TemporalAttention::<f64>::new(8, 4, &mut RngState::new(5));
    let x = random(&shape, 6);
    let (base, _) = forward_attn(&att, &x);
    for node in 0..4 {
        let mut z = x.clone();
        for t in 0..5 {
            for d in 0..8 {
                z.data_mut()[(t * 4 + node) * 8 + d] = 0.0;
            }
        }
        let (y, _) = forward_attn(&att, &z);
        let diff = changed(&base, &y, shape);
        assert!(!diff.is_empty());
        assert!(diff.iter().all(|i| i[2] == node), "node {node} leaked: {diff:?}");
    }
}

#[test]
fn attention_rows_are_distributions() {
    let att = TemporalAttention::<f64>::new(16, 4, &mut RngState::new(7));
    let (_, w) = forward_attn(&att, &random(&[2, 6, 3, 16], 8));
    for row in w.chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn single_step_attention_is_value_path() {
    let att = TemporalAttention::<f64>::new(8, 4, &mut RngState::new(9));
    let x = random(&[1, 1, 3, 8], 10);
    let (y, w) = forward_attn(&att, &x);
    assert!(w.iter().all(|&p| p == 1.0));
    // a = LN1(x) W_V W_out, y = a + FFN(LN2(a))
    let tape = Tape::<f64>::no_grad();
    let xn = att.norm1.forward(&tape, tape.leaf(&x)).unwrap();
    let a = xn
        .matmul(tape.leaf(&att.attn.w_v))
        .unwrap()
        .matmul(tape.leaf(&att.attn.w_out))
        .unwrap();
    let f = att.ffn.forward(&tape, att.norm2.forward(&tape, a).unwrap()).unwrap();
    let expected = a.add(f).unwrap().value();
    for (p, q) in y.iter().zip(expected.iter()) {
        assert!((p - q).abs() < 1e-12);
    }
}

fn forward_spatial(m: &SpatialSsm<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let tape = Tape::<f64>::no_grad();
    m.forward(&tape, tape.leaf(x)).unwrap().value().to_vec()
}

#[test]
fn spatial_module_never_mixes_time_steps() {
    let shape = [1, 4, 6, 8];
    let m = SpatialSsm::<f64>::new(8, 4, 2, &mut RngState::new(12));
    let x = random(&shape, 13);
    let base = forward_spatial(&m, &x);
    for t in 0..4 {
        let mut z = x.clone();
        for k in t * 48..(t + 1) * 48 {
            z.data_mut()[k] += 0.5;
        }
        let diff = changed(&base, &forward_spatial(&m, &z), shape);
        assert!(!diff.is_empty());
        assert!(diff.iter().all(|i| i[1] == t), "time {t} leaked: {diff:?}");
    }
}

#[test]
fn spatial_module_is_causal_along_sensors() {
    let shape = [1, 2, 7, 8];
    let m = SpatialSsm::<f64>::new(8, 4, 2, &mut RngState::new(14));
    let x = random(&shape, 15);
    let base = forward_spatial(&m, &x);
    for j in 0..7 {
        let mut z = x.clone();
        for d in 0..8 {
            z.data_mut()[j * 8 + d] += 0.3;
        }
        let diff = changed(&base, &forward_spatial(&m, &z), shape);
        assert!(diff.iter().any(|i| i[2] == j));
        assert!(
            diff.iter().all(|i| i[1] == 0 && i[2] >= j),
            "sensor {j} reached {diff:?}"
        );
    }
}

#[test]
fn spatial_attention_rows_sum_to_one() {
    let sa = fast_core::tst::SpatialAttention::<f64>::new(8, 4, &mut RngState::new(16));
    let tape = Tape::<f64>::no_grad();
    let (_, w) = sa
        .forward_with_weights(&tape, tape.leaf(&random(&[1, 3, 9, 8], 17)), &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(w.shape(), vec![3, 4, 9, 9]);
    for row in w.value().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
