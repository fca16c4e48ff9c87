//! Timing of the spatial stage alone and log-log scaling fits.

use std::time::Instant;

use crate::error::{FastError, Result};
use crate::model::{BlockVariant, ModelConfig};
use crate::numerics::{RngState, Tape, Tensor};
use crate::params::ForwardCtx;
use crate::tst::TstBlock;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: BlockVariant,
    pub n: usize,
    pub t_hist: usize,
    pub d_hidden: usize,
    pub d_state: usize,
    pub samples: Vec<f64>,
}

impl BenchRow {
    pub fn median(&self) -> f64 {
        quantile(&self.samples, 0.5)
    }

    pub fn iqr(&self) -> f64 {
        quantile(&self.samples, 0.75) - quantile(&self.samples, 0.25)
    }
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Slope of medians with a 95% percentile bootstrap interval obtained by
/// resampling repetitions within each size.
pub fn slope_with_ci(rows: &[BenchRow], iters: usize, seed: u64) -> (f64, f64, f64) {
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let medians: Vec<f64> = rows.iter().map(BenchRow::median).collect();
    let slope = loglog_slope(&ns, &medians);
    let mut rng = RngState::new(seed);
    let mut boot = Vec::with_capacity(iters);
    for _ in 0..iters {
        let m: Vec<f64> = rows
            .iter()
            .map(|r| {
                let s: Vec<f64> = (0..r.samples.len()).map(|_| r.samples[rng.below(r.samples.len())]).collect();
                quantile(&s, 0.5)
            })
            .collect();
        boot.push(loglog_slope(&ns, &m));
    }
    (slope, quantile(&boot, 0.025), quantile(&boot, 0.975))
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub variant: BlockVariant,
    pub n_list: Vec<usize>,
    pub t_hist: usize,
    pub d: usize,
    pub d_state: usize,
    pub heads: usize,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        let mut distinct = self.n_list.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 5 {
            return Err(FastError::Usage(format!(
                "need at least 5 distinct N values for a slope fit, got {}",
                distinct.len()
            )));
        }
        if self.reps < 11 || self.warmup < 3 {
            return Err(FastError::Usage("bench needs reps >= 11 and warmup >= 3".into()));
        }
        if !matches!(self.variant, BlockVariant::Fast | BlockVariant::SpatialAttention) {
            return Err(FastError::Usage(format!(
                "bench compares fast and spatial-attention, not {}",
                self.variant
            )));
        }
        Ok(())
    }
}

/// Eval-mode forward timings of the spatial stage for each `N`. Every
/// repetition sweeps all sizes, so slow periods on the machine spread across
/// sizes instead of biasing one of them.
pub fn run(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let mut cases = Vec::new();
    for &n in &spec.n_list {
        let cfg = ModelConfig {
            n_sensors: n,
            t_hist: spec.t_hist,
            d: spec.d,
            d_state: spec.d_state,
            heads: spec.heads,
            variant: spec.variant,
            blocks: 1,
            seed: spec.seed,
            ..Default::default()
        };
        cfg.validate()?;
        let mut rng = RngState::new(spec.seed);
        let block = TstBlock::<f32>::new(&cfg, &mut rng);
        let dh = cfg.d_hidden();
        let x = Tensor::new(&[1, spec.t_hist, n, dh], rng.normal_vec(spec.t_hist * n * dh, 1.0))?;
        cases.push((n, dh, block, x));
    }

    let mut samples = vec![Vec::with_capacity(spec.reps); cases.len()];
    for rep in 0..spec.warmup + spec.reps {
        for ((_, _, block, x), s) in cases.iter().zip(&mut samples) {
            let stage = block.spatial_stage().expect("variant has a spatial stage");
            let tape = Tape::no_grad();
            let t0 = Instant::now();
            let y = stage.forward(&tape, tape.leaf(x), &mut ForwardCtx::eval())?;
            std::hint::black_box(y.value());
            let dt = t0.elapsed().as_secs_f64();
            if rep >= spec.warmup {
                s.push(dt);
            }
        }
    }

    let rows = cases
        .into_iter()
        .zip(samples)
        .map(|((n, dh, _, _), samples)| {
            log::info!("bench {} N={n}: median {:.4}s", spec.variant, quantile(&samples, 0.5));
            BenchRow {
                variant: spec.variant,
                n,
                t_hist: spec.t_hist,
                d_hidden: dh,
                d_state: spec.d_state,
                samples,
            }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let x = [1.0, 2.0, 4.0, 8.0, 16.0];
        let lin: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let quad: Vec<f64> = x.iter().map(|v| 0.5 * v * v).collect();
        assert!((loglog_slope(&x, &lin) - 1.0).abs() < 1e-12);
        assert!((loglog_slope(&x, &quad) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.75), 4.0);
    }

    #[test]
    fn too_few_sizes_is_usage_error() {
        let spec = BenchSpec {
            variant: BlockVariant::Fast,
            n_list: vec![64, 64, 128, 256, 512],
            t_hist: 12,
            d: 32,
            d_state: 64,
            heads: 4,
            warmup: 3,
            reps: 11,
            seed: 0,
        };
        assert!(matches!(run(&spec), Err(FastError::Usage(_))));
    }
}
