//! Forecast error metrics on raw-scale values.

use std::path::Path;

use crate::error::{FastError, Result};
use crate::kv::KvMap;

pub const DEFAULT_MAPE_EPS: f64 = 1.0;

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(FastError::Dimension {
            op: "metric",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    if pred.is_empty() {
        return Err(FastError::UndefinedMetric("empty input".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Percent error over points with `|target| >= eps`, and the number of
/// points masked out.
pub fn mape_masked(pred: &[f64], target: &[f64], eps: f64) -> Result<(f64, usize)> {
    check(pred, target)?;
    let (mut sum, mut kept) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(target) {
        if t.abs() >= eps {
            sum += (p - t).abs() / t.abs();
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(FastError::UndefinedMetric(format!(
            "all {} targets below mape threshold {eps}",
            pred.len()
        )));
    }
    Ok((100.0 * sum / kept as f64, pred.len() - kept))
}

pub fn mape(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    Ok(mape_masked(pred, target, eps)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

impl MetricRow {
    pub fn compute(pred: &[f64], target: &[f64], eps: f64) -> Result<(Self, usize)> {
        let (mape, masked) = mape_masked(pred, target, eps)?;
        Ok((
            MetricRow {
                mae: mae(pred, target)?,
                rmse: rmse(pred, target)?,
                mape,
            },
            masked,
        ))
    }
}

/// Per-horizon and aggregate metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    pub per_horizon: Vec<MetricRow>,
    pub aggregate: MetricRow,
    pub n_points: usize,
    pub mape_masked_count: usize,
}

impl ForecastReport {
    /// `pred` and `target` are `[samples, T_f, N]` row-major.
    pub fn compute(pred: &[f64], target: &[f64], t_horizon: usize, n_sensors: usize, eps: f64) -> Result<Self> {
        check(pred, target)?;
        let step = t_horizon * n_sensors;
        if !pred.len().is_multiple_of(step) {
            return Err(FastError::Shape(format!(
                "{} values do not tile [_, {t_horizon}, {n_sensors}]",
                pred.len()
            )));
        }
        let samples = pred.len() / step;
        let mut per_horizon = Vec::with_capacity(t_horizon);
        for h in 0..t_horizon {
            let gather = |v: &[f64]| -> Vec<f64> {
                (0..samples)
                    .flat_map(|s| v[s * step + h * n_sensors..s * step + (h + 1) * n_sensors].to_vec())
                    .collect()
            };
            per_horizon.push(MetricRow::compute(&gather(pred), &gather(target), eps)?.0);
        }
        let (aggregate, masked) = MetricRow::compute(pred, target, eps)?;
        Ok(ForecastReport {
            per_horizon,
            aggregate,
            n_points: pred.len(),
            mape_masked_count: masked,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("horizon,mae,rmse,mape\n");
        for (h, r) in self.per_horizon.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", h + 1, r.mae, r.rmse, r.mape));
        }
        let a = &self.aggregate;
        s.push_str(&format!("all,{},{},{}\n", a.mae, a.rmse, a.mape));
        s
    }

    pub fn to_kv(&self, prefix: &str) -> KvMap {
        let mut kv = KvMap::new();
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        kv.set(&key("mae"), self.aggregate.mae);
        kv.set(&key("rmse"), self.aggregate.rmse);
        kv.set(&key("mape"), self.aggregate.mape);
        kv.set(&key("n_points"), self.n_points);
        kv.set(&key("mape_masked_count"), self.mape_masked_count);
        kv
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| FastError::io(csv_path, e))
    }
}
