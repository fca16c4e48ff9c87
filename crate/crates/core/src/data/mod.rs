//! Series ingestion, chronological splits, normalization and sliding windows.

mod synth;

pub use synth::{synth_generate, SynthSpec};

use std::ops::Range;
use std::path::Path;

use crate::embedding::{calendar_indices, DAYS_PER_WEEK};
use crate::error::{FastError, Result};
use crate::kv::KvMap;
use crate::numerics::{Real, RngState, Tensor};

/// Flow readings, one row per time step and one column per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    /// row-major `[len, n_sensors]`
    pub values: Vec<f64>,
    pub len: usize,
    pub n_sensors: usize,
    pub interval_minutes: usize,
    pub start_slot: usize,
    pub start_dow: usize,
    pub sensor_ids: Vec<String>,
}

impl TrafficSeries {
    pub fn at(&self, t: usize, sensor: usize) -> f64 {
        self.values[t * self.n_sensors + sensor]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_sensors..(t + 1) * self.n_sensors]
    }

    pub fn slots_per_day(&self) -> usize {
        24 * 60 / self.interval_minutes
    }

    /// Calendar position of step `t` as (slot of day, day of week).
    pub fn calendar(&self, t: usize) -> (usize, usize) {
        let spd = self.slots_per_day();
        let abs = self.start_slot + t;
        (abs % spd, (self.start_dow + abs / spd) % DAYS_PER_WEEK)
    }

    pub fn meta_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("interval_minutes", self.interval_minutes);
        kv.set("start_slot", self.start_slot);
        kv.set("start_dow", self.start_dow);
        kv.set("sensor_ids", self.sensor_ids.join(","));
        kv
    }

    /// Writes the headerless CSV and its metadata file.
    pub fn save(&self, data_path: &Path, meta_path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in 0..self.len {
            let row: Vec<String> = self.row(t).iter().map(|v| v.to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(data_path, text).map_err(|e| FastError::io(data_path, e))?;
        self.meta_kv().save(meta_path)
    }
}

/// Counts of cleaning actions taken during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub clamped: usize,
    pub forward_filled: usize,
    pub mean_filled: usize,
}

/// Reads a series from a headerless CSV and a key=value metadata file.
pub fn load_series(data_path: &Path, meta_path: &Path, min_len: usize) -> Result<TrafficSeries> {
    let text = std::fs::read_to_string(data_path).map_err(|e| FastError::io(data_path, e))?;
    let meta = KvMap::load(meta_path)?;
    let (series, stats) = parse_series(&text, &meta, min_len)?;
    if stats != IngestStats::default() {
        log::info!(
            "{}: clamped {} negative, forward-filled {}, mean-filled {} leading missing",
            data_path.display(),
            stats.clamped,
            stats.forward_filled,
            stats.mean_filled
        );
    }
    Ok(series)
}

pub fn parse_series(text: &str, meta: &KvMap, min_len: usize) -> Result<(TrafficSeries, IngestStats)> {
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut n = None;
    let mut len = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let width = *n.get_or_insert(fields.len());
        if fields.len() != width {
            return Err(FastError::Ingestion {
                row,
                col: None,
                msg: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            let f = f.trim();
            if f.is_empty() {
                cells.push(None);
                continue;
            }
            let v: f64 = f.parse().map_err(|_| FastError::Ingestion {
                row,
                col: Some(col),
                msg: format!("not a number: {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(FastError::Ingestion {
                    row,
                    col: Some(col),
                    msg: format!("non-finite value {f:?}"),
                });
            }
            cells.push(Some(v));
        }
        len += 1;
    }
    let n = n.ok_or(FastError::Ingestion {
        row: 0,
        col: None,
        msg: "empty data file".into(),
    })?;
    if len < min_len {
        return Err(FastError::Ingestion {
            row: len,
            col: None,
            msg: format!("{len} rows, need at least {min_len}"),
        });
    }

    let mut stats = IngestStats::default();
    let mut values = vec![0.0; len * n];
    for c in 0..n {
        let present: Vec<f64> = (0..len).filter_map(|t| cells[t * n + c]).collect();
        if present.is_empty() {
            return Err(FastError::Ingestion {
                row: 0,
                col: Some(c),
                msg: "column has no values".into(),
            });
        }
        let col_mean = present.iter().sum::<f64>() / present.len() as f64;
        let mut last = None;
        for t in 0..len {
            let v = match (cells[t * n + c], last) {
                (Some(v), _) => v,
                (None, Some(prev)) => {
                    stats.forward_filled += 1;
                    prev
                }
                (None, None) => {
                    stats.mean_filled += 1;
                    col_mean
                }
            };
            let v = if v < 0.0 {
                stats.clamped += 1;
                0.0
            } else {
                v
            };
            values[t * n + c] = v;
            last = Some(v);
        }
    }

    let interval_minutes = meta.get_or("interval_minutes", 5usize)?;
    if interval_minutes == 0 || (24 * 60) % interval_minutes != 0 {
        return Err(FastError::Config(format!(
            "interval_minutes {interval_minutes} does not divide a day"
        )));
    }
    let start_slot: usize = meta.get_or("start_slot", 0)?;
    let start_dow: usize = meta.get_or("start_dow", 0)?;
    if start_slot >= 24 * 60 / interval_minutes || start_dow >= DAYS_PER_WEEK {
        return Err(FastError::Config(format!(
            "calendar start ({start_slot}, {start_dow}) out of range"
        )));
    }
    let sensor_ids: Vec<String> = match meta.get_str("sensor_ids") {
        Some(s) if !s.is_empty() => s.split(',').map(|x| x.trim().to_string()).collect(),
        _ => (0..n).map(|i| i.to_string()).collect(),
    };
    if sensor_ids.len() != n {
        return Err(FastError::Config(format!(
            "{} sensor ids for {n} columns",
            sensor_ids.len()
        )));
    }
    Ok((
        TrafficSeries {
            values,
            len,
            n_sensors: n,
            interval_minutes,
            start_slot,
            start_dow,
            sensor_ids,
        },
        stats,
    ))
}

/// Chronological 8:1:1 partition of time steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_811(len: usize) -> Split {
    let a = len * 8 / 10;
    let b = len * 9 / 10;
    Split {
        train: 0..a,
        val: a..b,
        test: b..len,
    }
}

/// Windows whose full history and target span fits in `range`.
pub fn window_count(range: &Range<usize>, t_hist: usize, t_horizon: usize) -> usize {
    (range.len() + 1).saturating_sub(t_hist + t_horizon)
}

/// z-score statistics over the training range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn fit(series: &TrafficSeries, range: &Range<usize>) -> Result<Self> {
        let vals = &series.values[range.start * series.n_sensors..range.end * series.n_sensors];
        if vals.is_empty() {
            return Err(FastError::Config("empty range for normalization".into()));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let stats = NormStats { mean, std: var.sqrt() };
        stats.check()?;
        Ok(stats)
    }

    pub fn check(&self) -> Result<()> {
        if self.std <= 0.0 || !self.std.is_finite() || !self.mean.is_finite() {
            return Err(FastError::Config(format!(
                "normalization needs a positive finite std, got {}",
                self.std
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Sliding-window samples of one split.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub tag: SplitTag,
    pub t_hist: usize,
    pub t_horizon: usize,
    pub n_sensors: usize,
    /// first history step of each window, ascending
    pub starts: Vec<usize>,
    /// normalized `[count, T_h, N]`
    pub history: Vec<f64>,
    /// raw-scale `[count, T_f, N]`
    pub target: Vec<f64>,
    /// `[count, T_h]`
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
}

/// A mini-batch ready for the model.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub window: Tensor<T>,
    pub target: Tensor<T>,
    pub target_norm: Tensor<T>,
    pub last: Tensor<T>,
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
}

impl WindowedDataset {
    pub fn build(
        series: &TrafficSeries,
        range: Range<usize>,
        tag: SplitTag,
        t_hist: usize,
        t_horizon: usize,
        stats: &NormStats,
    ) -> Result<Self> {
        let count = window_count(&range, t_hist, t_horizon);
        if count == 0 {
            return Err(FastError::Config(format!(
                "{tag:?} split {range:?} is too short for T_h={t_hist}, T_f={t_horizon}"
            )));
        }
        let n = series.n_sensors;
        let mut ds = WindowedDataset {
            tag,
            t_hist,
            t_horizon,
            n_sensors: n,
            starts: Vec::with_capacity(count),
            history: Vec::with_capacity(count * t_hist * n),
            target: Vec::with_capacity(count * t_horizon * n),
            tod: Vec::with_capacity(count * t_hist),
            dow: Vec::with_capacity(count * t_hist),
        };
        for k in 0..count {
            let s = range.start + k;
            ds.starts.push(s);
            for t in s..s + t_hist {
                ds.history.extend(series.row(t).iter().map(|&v| stats.normalize(v)));
            }
            for t in s + t_hist..s + t_hist + t_horizon {
                ds.target.extend_from_slice(series.row(t));
            }
            let (slot, day) = series.calendar(s);
            let (tod, dow) = calendar_indices(slot, day, t_hist, series.slots_per_day());
            ds.tod.extend(tod);
            ds.dow.extend(dow);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Gathers samples `idx` into tensors; `last` is the raw-scale final
    /// history row repeated over the horizon (persistence forecast).
    pub fn batch<T: Real>(&self, idx: &[usize], stats: &NormStats) -> Result<Batch<T>> {
        let (th, tf, n) = (self.t_hist, self.t_horizon, self.n_sensors);
        let b = idx.len();
        let mut window = Vec::with_capacity(b * th * n);
        let mut target = Vec::with_capacity(b * tf * n);
        let mut target_norm = Vec::with_capacity(b * tf * n);
        let mut last = Vec::with_capacity(b * tf * n);
        let mut tod = Vec::with_capacity(b * th);
        let mut dow = Vec::with_capacity(b * th);
        for &i in idx {
            let h = &self.history[i * th * n..(i + 1) * th * n];
            window.extend(h.iter().map(|&v| T::c(v)));
            let y = &self.target[i * tf * n..(i + 1) * tf * n];
            target.extend(y.iter().map(|&v| T::c(v)));
            target_norm.extend(y.iter().map(|&v| T::c(stats.normalize(v))));
            let final_row = &h[(th - 1) * n..];
            for _ in 0..tf {
                last.extend(final_row.iter().map(|&v| T::c(stats.denormalize(v))));
            }
            tod.extend_from_slice(&self.tod[i * th..(i + 1) * th]);
            dow.extend_from_slice(&self.dow[i * th..(i + 1) * th]);
        }
        Ok(Batch {
            window: Tensor::new(&[b, th, n], window)?,
            target: Tensor::new(&[b, tf, n], target)?,
            target_norm: Tensor::new(&[b, tf, n], target_norm)?,
            last: Tensor::new(&[b, tf, n], last)?,
            tod,
            dow,
        })
    }

    /// Index batches of at most `size`, shuffled when an rng is given.
    pub fn batches(&self, size: usize, rng: Option<&mut RngState>) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(r) = rng {
            r.shuffle(&mut order);
        }
        order.chunks(size.max(1)).map(|c| c.to_vec()).collect()
    }
}

/// Train/val/test windows with statistics fitted on the train range.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: Split,
    pub stats: NormStats,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
}

pub fn prepare(series: &TrafficSeries, t_hist: usize, t_horizon: usize) -> Result<Prepared> {
    let split = split_811(series.len);
    let stats = NormStats::fit(series, &split.train)?;
    let mk = |r: &Range<usize>, tag| WindowedDataset::build(series, r.clone(), tag, t_hist, t_horizon, &stats);
    Ok(Prepared {
        train: mk(&split.train, SplitTag::Train)?,
        val: mk(&split.val, SplitTag::Val)?,
        test: mk(&split.test, SplitTag::Test)?,
        split,
        stats,
    })
}

/// Test-split windows normalized with existing statistics, as stored in a
/// checkpoint, so evaluation reproduces the training run's test metrics.
pub fn prepare_with_stats(
    series: &TrafficSeries,
    t_hist: usize,
    t_horizon: usize,
    stats: NormStats,
) -> Result<WindowedDataset> {
    stats.check()?;
    let split = split_811(series.len);
    WindowedDataset::build(series, split.test, SplitTag::Test, t_hist, t_horizon, &stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(ids: &str) -> KvMap {
        KvMap::parse(&format!("interval_minutes=5\nstart_slot=0\nstart_dow=0\nsensor_ids={ids}")).unwrap()
    }

    #[test]
    fn parses_plain_rows() {
        let (s, stats) = parse_series("1,2\n3,4\n5,6", &meta("a,b"), 1).unwrap();
        assert_eq!(s.values, vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!((s.len, s.n_sensors), (3, 2));
        assert_eq!(stats, IngestStats::default());
    }

    #[test]
    fn forward_fills_and_clamps() {
        let (s, stats) = parse_series("1,2\n,-4\n5,\n", &meta("a,b"), 1).unwrap();
        assert_eq!(s.values, vec![1., 2., 1., 0., 5., 0.]);
        assert_eq!(stats.forward_filled, 2);
        assert_eq!(stats.clamped, 1);
    }

    #[test]
    fn leading_missing_uses_column_mean() {
        let (s, stats) = parse_series(",2\n4,2\n6,2", &meta("a,b"), 1).unwrap();
        assert_eq!(s.at(0, 0), 5.0);
        assert_eq!(stats.mean_filled, 1);
    }

    #[test]
    fn ragged_row_names_the_row() {
        let err = parse_series("1,2\n1,2,3\n", &meta("a,b"), 1).unwrap_err();
        assert!(matches!(err, FastError::Ingestion { row: 1, col: None, .. }), "{err}");
        let err = parse_series("1,2\n1,x\n", &meta("a,b"), 1).unwrap_err();
        assert!(matches!(err, FastError::Ingestion { row: 1, col: Some(1), .. }), "{err}");
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(
            parse_series("1\n2\n", &meta("a"), 24),
            Err(FastError::Ingestion { .. })
        ));
    }

    #[test]
    fn split_boundaries() {
        let s = split_811(1000);
        assert_eq!((s.train.end, s.val.end, s.test.end), (800, 900, 1000));
        assert_eq!(window_count(&(0..100), 12, 12), 77);
        assert_eq!(window_count(&(0..24), 12, 12), 1);
        assert_eq!(window_count(&(0..23), 12, 12), 0);
    }

    #[test]
    fn norm_examples() {
        let st = NormStats { mean: 10.0, std: 2.0 };
        assert_eq!(st.normalize(14.0), 2.0);
        assert_eq!(st.normalize(10.0), 0.0);
        assert!(NormStats { mean: 1.0, std: 0.0 }.check().is_err());
    }
}
