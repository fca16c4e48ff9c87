//! Every differentiable op with fixed inputs, shared by the gradient tests
//! and the acceptance run.

use fast_core::numerics::{RngState, Tape, Tensor, Var};
use fast_core::Result;

use super::gradcheck::{check, positive, random};

type Body = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub body: Body,
}

impl OpCase {
    pub fn error(&self) -> f64 {
        check(&self.inputs, |t, v| (self.body)(t, v))
    }
}

macro_rules! case {
    ($name:literal, [$($input:expr),+], |$tape:ident, $v:ident| $body:expr) => {
        OpCase {
            name: $name,
            inputs: vec![$($input),+],
            body: Box::new(|$tape, $v| $body),
        }
    };
    ($name:literal, $inputs:expr, |$tape:ident, $v:ident| $body:expr) => {
        OpCase {
            name: $name,
            inputs: $inputs,
            body: Box::new(|$tape, $v| $body),
        }
    };
}

fn scan_inputs(seed: u64, seqs: usize, st: usize) -> Vec<Tensor<f64>> {
    let mut a_log = random(&[3, st], seed + 2);
    a_log.data_mut().iter_mut().for_each(|v| *v *= 0.5);
    vec![
        random(&[seqs, 5, 3], seed),
        positive(&[seqs, 5, 3], seed + 1),
        a_log,
        random(&[seqs, 5, st], seed + 3),
        random(&[seqs, 5, st], seed + 4),
        random(&[3], seed + 5),
    ]
}

pub fn all() -> Vec<OpCase> {
    vec![
        case!("add_same_shape", [random(&[3, 4], 1), random(&[3, 4], 2)], |_t, v| v[0].add(v[1])),
        case!("add_broadcast_bias", [random(&[2, 3, 4], 1), random(&[4], 2)], |_t, v| v[0].add(v[1])),
        case!("add_broadcast_both", [random(&[2, 1, 4], 1), random(&[3, 1], 2)], |_t, v| v[0].add(v[1])),
        case!("sub_broadcast", [random(&[2, 3], 1), random(&[1, 3], 2)], |_t, v| v[0].sub(v[1])),
        case!("mul_hadamard", [random(&[3, 4], 3), random(&[3, 4], 4)], |_t, v| v[0].mul(v[1])),
        case!("mul_broadcast", [random(&[2, 3, 4], 3), random(&[3, 1], 4)], |_t, v| v[0].mul(v[1])),
        case!("scale", [random(&[5], 5)], |_t, v| v[0].scale(-1.7)),
        case!("add_scalar", [random(&[5], 5)], |_t, v| v[0].add_scalar(0.3)),
        case!("exp", [random(&[6], 6)], |_t, v| v[0].exp()),
        case!("square", [random(&[6], 6)], |_t, v| v[0].square()),
        case!("relu", [random(&[4, 5], 7)], |_t, v| v[0].relu()),
        case!("sigmoid", [random(&[4, 5], 7)], |_t, v| v[0].sigmoid()),
        case!("silu", [random(&[4, 5], 8)], |_t, v| v[0].silu()),
        case!("softplus", [random(&[4, 5], 9)], |_t, v| v[0].softplus()),
        case!("sum", [random(&[3, 3], 10)], |_t, v| v[0].sum()),
        case!("mean", [random(&[3, 3], 10)], |_t, v| v[0].mean()),
        case!("matmul_2d", [random(&[3, 4], 11), random(&[4, 2], 12)], |_t, v| v[0].matmul(v[1])),
        case!("matmul_tall", [random(&[2, 3, 4], 11), random(&[4, 5], 12)], |_t, v| v[0].matmul(v[1])),
        case!("matmul_batched", [random(&[2, 3, 3, 4], 13), random(&[2, 3, 4, 2], 14)], |_t, v| v[0].matmul(v[1])),
        case!("matmul_broadcast_rhs_batch", [random(&[2, 3, 4], 13), random(&[1, 4, 2], 14)], |_t, v| v[0].matmul(v[1])),
        case!("matmul_broadcast_lhs_batch", [random(&[1, 3, 4], 13), random(&[3, 4, 2], 14)], |_t, v| v[0].matmul(v[1])),
        case!("linear", [random(&[2, 3, 4], 15), random(&[4, 5], 16), random(&[5], 17)], |_t, v| v[0].linear(v[1], Some(v[2]))),
        case!("reshape", [random(&[2, 6], 18)], |_t, v| v[0].reshape(&[3, 4])?.square()),
        case!("permute", [random(&[2, 3, 4], 19)], |_t, v| v[0].permute(&[2, 0, 1])?.square()),
        case!("transpose", [random(&[3, 4], 20)], |_t, v| v[0].transpose()?.square()),
        case!("broadcast_to", [random(&[3, 1], 21)], |_t, v| v[0].broadcast_to(&[2, 3, 4])?.square()),
        case!("concat_lastdim", [random(&[2, 3, 2], 22), random(&[2, 3, 3], 23)], |t, v| t.concat_lastdim(&[v[0], v[1]])?.square()),
        case!("softmax_lastdim", [random(&[3, 5], 24)], |_t, v| v[0].softmax_lastdim()),
        case!("layer_norm", [random(&[3, 6], 25), positive(&[6], 26), random(&[6], 27)], |_t, v| v[0].layer_norm(v[1], v[2], 1e-5)),
        case!("dropout", [random(&[4, 4], 28)], |_t, v| v[0].dropout(0.3, &mut RngState::new(5), true)),
        case!("embedding_lookup", [random(&[7, 3], 29)], |t, v| t.embedding_lookup(v[0], &[1, 4, 4, 6], &[2, 2])),
        case!("conv1d_causal", [random(&[2, 5, 3], 30), random(&[2, 3], 31), random(&[3], 32)], |_t, v| v[0].conv1d_causal(v[1], v[2])),
        case!("conv1d_wide_kernel", [random(&[3, 2], 30), random(&[4, 2], 31), random(&[2], 32)], |_t, v| v[0].conv1d_causal(v[1], v[2])),
        case!("shared_use_accumulates", [random(&[3], 33)], |_t, v| v[0].mul(v[0])?.add(v[0])),
        case!("selective_scan_a", scan_inputs(40, 2, 4), |_t, v| v[0].selective_scan(v[1], v[2], v[3], v[4], v[5])),
        case!("selective_scan_b", scan_inputs(50, 2, 4), |_t, v| v[0].selective_scan(v[1], v[2], v[3], v[4], v[5])),
        case!("selective_scan_c", scan_inputs(60, 2, 4), |_t, v| v[0].selective_scan(v[1], v[2], v[3], v[4], v[5])),
        // 11 states cover one full group of eight lanes plus a padded tail; 9
        // sequences span two reduction groups
        case!("selective_scan_lane_groups", scan_inputs(70, 9, 11), |_t, v| v[0].selective_scan(v[1], v[2], v[3], v[4], v[5])),
    ]
}
