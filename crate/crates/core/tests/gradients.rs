//! Analytic gradients of every differentiable op against central finite
//! differences in 64-bit.

mod common;

const TOL: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences() {
    let cases = common::ops::all();
    let failures: Vec<String> = cases
        .iter()
        .map(|c| (c.name, c.error()))
        .filter(|(_, err)| err.is_nan() || *err > TOL)
        .map(|(name, err)| format!("{name}: {err:e}"))
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn every_op_has_a_case() {
    let names: Vec<&str> = common::ops::all().iter().map(|c| c.name).collect();
    for op in ["matmul", "softmax", "layer_norm", "conv1d", "selective_scan", "embedding_lookup", "dropout"] {
        assert!(names.iter().any(|n| n.starts_with(op)), "{op}");
    }
}
