//! MSE training with AdamW, validation-based early stopping and a
//! per-epoch history.

use std::path::Path;
use std::time::Instant;

use crate::data::{NormStats, Prepared, WindowedDataset};
use crate::error::{FastError, Result};
use crate::kv::KvMap;
use crate::metrics::{ForecastReport, DEFAULT_MAPE_EPS};
use crate::model::FastModel;
use crate::numerics::{runtime, Real, RngState, Tape, Var};
use crate::params::{ForwardCtx, Parameterized};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: Option<f64>,
    /// caps optimizer steps per epoch (a random subset of batches each epoch)
    pub max_batches_per_epoch: Option<usize>,
    pub mape_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            max_batches_per_epoch: None,
            mape_eps: DEFAULT_MAPE_EPS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(FastError::Config(
                "lr must be > 0 and patience, batch_size, max_epochs >= 1".into(),
            ));
        }
        if self.max_batches_per_epoch == Some(0) {
            return Err(FastError::Config("max_batches_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("lr", self.lr);
        kv.set("batch_size", self.batch_size);
        kv.set("max_epochs", self.max_epochs);
        kv.set("patience", self.patience);
        kv.set("weight_decay", self.weight_decay);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("eps", self.eps);
        kv.set("grad_clip", self.grad_clip.map_or("none".to_string(), |c| c.to_string()));
        kv.set(
            "max_batches_per_epoch",
            self.max_batches_per_epoch.map_or("none".to_string(), |c| c.to_string()),
        );
        kv.set("mape_eps", self.mape_eps);
        kv.set("train_seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = TrainConfig::default();
        let opt = |key: &str, default: Option<f64>| -> Result<Option<f64>> {
            match kv.get_str(key) {
                None => Ok(default),
                Some("none") | Some("") => Ok(None),
                Some(_) => kv.get(key),
            }
        };
        let cfg = TrainConfig {
            lr: kv.get_or("lr", d.lr)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
            patience: kv.get_or("patience", d.patience)?,
            weight_decay: kv.get_or("weight_decay", d.weight_decay)?,
            beta1: kv.get_or("beta1", d.beta1)?,
            beta2: kv.get_or("beta2", d.beta2)?,
            eps: kv.get_or("eps", d.eps)?,
            grad_clip: opt("grad_clip", d.grad_clip)?,
            max_batches_per_epoch: opt("max_batches_per_epoch", None)?.map(|v| v as usize),
            mape_eps: kv.get_or("mape_eps", d.mape_eps)?,
            seed: kv.get_or("train_seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mean of squared differences over all elements.
pub fn mse_loss<'t, T: Real>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(FastError::Dimension {
            op: "mse_loss",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    pred.sub(target)?.square()?.mean()
}

fn decays(name: &str) -> bool {
    !["day_table", "time_table", "node_pos"]
        .iter()
        .any(|t| name.ends_with(t))
}

/// AdamW with decoupled weight decay. Moment buffers follow the module's
/// parameter visiting order.
#[derive(Debug, Clone, Default)]
pub struct AdamW<T: Real = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new() -> Self {
        AdamW {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the gradients stored on the parameters.
    pub fn step(&mut self, module: &mut dyn Parameterized<T>, cfg: &TrainConfig) -> Result<()> {
        let mut sq = 0.0f64;
        let mut bad = None;
        module.visit("", &mut |name, t| {
            if let Some(g) = t.grad() {
                for &x in g {
                    let x = x.to_f64().unwrap_or(f64::NAN);
                    if !x.is_finite() && bad.is_none() {
                        bad = Some(name.to_string());
                    }
                    sq += x * x;
                }
            }
        });
        if let Some(name) = bad {
            return Err(FastError::Numeric(format!("non-finite gradient in {name}")));
        }
        let clip = match cfg.grad_clip {
            Some(max) if sq.sqrt() > max => max / sq.sqrt(),
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let (lr, eps) = (T::c(cfg.lr), T::c(cfg.eps));
        let (bc1, bc2, clip) = (T::c(bc1), T::c(bc2), T::c(clip));
        let first = self.m.is_empty();
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit_mut("", &mut |name, p| {
            if first {
                ms.push(vec![T::zero(); p.numel()]);
                vs.push(vec![T::zero(); p.numel()]);
            }
            let (m, v) = (&mut ms[k], &mut vs[k]);
            k += 1;
            let wd = if decays(name) { T::c(cfg.weight_decay) } else { T::zero() };
            let grad = p.grad().map(<[T]>::to_vec);
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i] * clip);
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = data[i] - lr * wd * data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

/// Patience counter over a validation metric where lower is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records `value` for `epoch`; returns (improved, should_stop).
    pub fn update(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
    pub seconds: f64,
}

pub fn history_csv(history: &[EpochRecord], with_time: bool) -> String {
    let mut s = String::from("epoch,train_loss,val_mae,val_rmse,val_mape,seconds\n");
    for r in history {
        let secs = if with_time { r.seconds } else { 0.0 };
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_mae, r.val_rmse, r.val_mape, secs
        ));
    }
    s
}

pub fn write_history(path: &Path, history: &[EpochRecord], with_time: bool) -> Result<()> {
    std::fs::write(path, history_csv(history, with_time)).map_err(|e| FastError::io(path, e))
}

/// Raw-scale predictions `[samples, T_f, N]` for every window of `ds`.
pub fn predict_dataset<T: Real>(
    model: &FastModel<T>,
    ds: &WindowedDataset,
    stats: &NormStats,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_compatible(ds.n_sensors, ds.t_hist)?;
    let mut pred = Vec::with_capacity(ds.target.len());
    let mut target = Vec::with_capacity(ds.target.len());
    for idx in ds.batches(batch_size, None) {
        let batch = ds.batch::<T>(&idx, stats)?;
        let tape = Tape::no_grad();
        let w = tape.leaf(&batch.window);
        let y = model.forward_batch(&tape, w, &batch.tod, &batch.dow, &mut ForwardCtx::eval())?;
        pred.extend(y.value().iter().map(|v| stats.denormalize(v.to_f64().unwrap_or(f64::NAN))));
        target.extend(batch.target.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)));
    }
    Ok((pred, target))
}

pub fn evaluate<T: Real>(
    model: &FastModel<T>,
    ds: &WindowedDataset,
    stats: &NormStats,
    batch_size: usize,
    mape_eps: f64,
) -> Result<ForecastReport> {
    let (pred, target) = predict_dataset(model, ds, stats, batch_size)?;
    ForecastReport::compute(&pred, &target, ds.t_horizon, ds.n_sensors, mape_eps)
}

/// Persistence forecast: the last observed value held over the horizon.
pub fn persistence_report(ds: &WindowedDataset, stats: &NormStats, mape_eps: f64) -> Result<ForecastReport> {
    let (th, n) = (ds.t_hist, ds.n_sensors);
    let mut pred = Vec::with_capacity(ds.target.len());
    for i in 0..ds.len() {
        let last = &ds.history[(i * th + th - 1) * n..(i * th + th) * n];
        for _ in 0..ds.t_horizon {
            pred.extend(last.iter().map(|&z| stats.denormalize(z)));
        }
    }
    ForecastReport::compute(&pred, &ds.target, ds.t_horizon, n, mape_eps)
}

#[derive(Debug, Clone)]
pub struct FitResult<T: Real = f32> {
    /// parameters from the epoch with the best validation MAE
    pub model: FastModel<T>,
    pub optimizer: AdamW<T>,
    pub stopper: EarlyStopper,
    pub history: Vec<EpochRecord>,
    pub initial_val_mae: f64,
    pub train_seconds: f64,
    pub peak_tape_bytes: usize,
}

/// One optimizer step on a batch; returns the loss.
pub fn train_step<T: Real>(
    model: &mut FastModel<T>,
    opt: &mut AdamW<T>,
    ds: &WindowedDataset,
    idx: &[usize],
    stats: &NormStats,
    cfg: &TrainConfig,
    rng: RngState,
) -> Result<f64> {
    let batch = ds.batch::<T>(idx, stats)?;
    let loss_val;
    let grads = {
        let tape = Tape::new();
        let w = tape.leaf(&batch.window);
        let mut ctx = ForwardCtx::train(model.config.dropout, rng);
        let pred = model.forward_batch(&tape, w, &batch.tod, &batch.dow, &mut ctx)?;
        let loss = mse_loss(pred, tape.leaf(&batch.target_norm))?;
        loss_val = loss.item().to_f64().unwrap_or(f64::NAN);
        tape.backward(loss)?
    };
    model.zero_grad();
    model.accumulate_grads(&grads)?;
    opt.step(model, cfg)?;
    Ok(loss_val)
}

pub fn fit<T: Real>(mut model: FastModel<T>, data: &Prepared, cfg: &TrainConfig) -> Result<FitResult<T>> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(FastError::Config("train and val splits must be nonempty".into()));
    }
    model.meta.norm = data.stats;
    let eval_bs = cfg.batch_size.max(64);
    let initial_val_mae = evaluate(&model, &data.val, &data.stats, eval_bs, cfg.mape_eps)?
        .aggregate
        .mae;
    let root = RngState::new(cfg.seed);
    let mut opt = AdamW::new();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let started = Instant::now();
    runtime::reset_peak();

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let mut shuffle = root.split(2 * epoch as u64);
        let dropout_root = root.split(2 * epoch as u64 + 1);
        let mut batches = data.train.batches(cfg.batch_size, Some(&mut shuffle));
        if let Some(cap) = cfg.max_batches_per_epoch {
            batches.truncate(cap);
        }
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let loss = train_step(&mut model, &mut opt, &data.train, idx, &data.stats, cfg, dropout_root.split(bi as u64))
                .map_err(|e| match e {
                    FastError::Numeric(msg) => {
                        FastError::Numeric(format!("epoch {epoch}, batch {bi}: {msg}"))
                    }
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(FastError::Numeric(format!("epoch {epoch}, batch {bi}: loss is {loss}")));
            }
            total += loss;
        }
        let train_loss = total / batches.len() as f64;
        let val = evaluate(&model, &data.val, &data.stats, eval_bs, cfg.mape_eps)?;
        let seconds = t0.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_mae {:.4} ({seconds:.1}s)",
            val.aggregate.mae
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_mae: val.aggregate.mae,
            val_rmse: val.aggregate.rmse,
            val_mape: val.aggregate.mape,
            seconds,
        });
        let (improved, stop) = stopper.update(epoch, val.aggregate.mae);
        if improved {
            best = model.clone();
        }
        if stop {
            break;
        }
    }
    best.zero_grad();
    Ok(FitResult {
        model: best,
        optimizer: opt,
        stopper,
        history,
        initial_val_mae,
        train_seconds: started.elapsed().as_secs_f64(),
        peak_tape_bytes: runtime::peak_bytes(),
    })
}
