//! Command-line front end: train, eval, bench, ablate and defaults.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchRow, BenchSpec};
use crate::data::{self, synth_generate, NormStats, Prepared, SplitTag, SynthSpec, TrafficSeries, WindowedDataset};
use crate::error::{FastError, Result};
use crate::kv::KvMap;
use crate::metrics::ForecastReport;
use crate::model::{param_count, BlockVariant, FastModel, ModelConfig, BLOCKS_GRID, D_GRID, HEADS_GRID};
use crate::numerics::{runtime, RngState};
use crate::train::{self, EpochRecord, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "fast", version, about = "Traffic forecasting with temporal attention and selective scans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and evaluate it on the test split
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split
    Eval(EvalArgs),
    /// Time the spatial stage over a range of sensor counts
    Bench(BenchArgs),
    /// Train the ablation variants under one budget
    Ablate(AblateArgs),
    /// Print the default configuration
    Defaults,
}

#[derive(Debug, Clone, Args, Default)]
pub struct SourceArgs {
    /// headerless CSV, one row per time step
    #[arg(long, requires = "meta")]
    pub data: Option<PathBuf>,
    /// key=value metadata for --data
    #[arg(long, requires = "data")]
    pub meta: Option<PathBuf>,
    /// key=value synthetic generator spec
    #[arg(long, conflicts_with = "data")]
    pub synth_spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// key=value model and training settings
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// overrides the model and training seeds
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// data source settings when no source flag is given
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// also report the last-value persistence forecast
    #[arg(long)]
    pub baseline: bool,
    /// write per-point predictions
    #[arg(long)]
    pub predictions: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "fast")]
    pub variant: BlockVariant,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024")]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    pub t_hist: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 64)]
    pub d_state: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 11)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// also time training steps of each variant at this many sensors
    #[arg(long)]
    pub timing_n: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub timing_steps: usize,
    /// batch size of the timed steps; the scan keeps every state for the
    /// backward pass, so memory grows with batch * N
    #[arg(long, default_value_t = 4)]
    pub timing_batch: usize,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = run(cli.command);
    if runtime::profiling() {
        eprintln!("{:<24} {:>12} {:>12} {:>10}", "op", "forward_s", "backward_s", "calls");
        for (op, f, b, calls) in runtime::profile_snapshot() {
            eprintln!("{op:<24} {f:>12.4} {b:>12.4} {calls:>10}");
        }
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Bench(a) => cmd_bench(&a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| ()),
        Command::Defaults => {
            print!("{}", defaults_text());
            Ok(())
        }
    }
}

pub fn defaults_text() -> String {
    let join = |g: &[usize]| g.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let mut s = format!(
        "# grid: d in {{{}}}, blocks in {{{}}}, heads in {{{}}}\n",
        join(&D_GRID),
        join(&BLOCKS_GRID),
        join(&HEADS_GRID)
    );
    s.push_str(&ModelConfig::default().to_kv().to_text());
    s.push_str(&TrainConfig::default().to_kv().to_text());
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FastError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FastError::io(dir, e))
}

/// A resolved data source: explicit flags win over keys in the config file.
#[derive(Debug, Clone)]
pub enum Source {
    Files { data: PathBuf, meta: PathBuf },
    Synth(SynthSpec),
}

impl Source {
    pub fn resolve(args: &SourceArgs, kv: &KvMap) -> Result<Self> {
        if let (Some(d), Some(m)) = (&args.data, &args.meta) {
            return Ok(Source::Files {
                data: d.clone(),
                meta: m.clone(),
            });
        }
        if let Some(p) = &args.synth_spec {
            return Ok(Source::Synth(SynthSpec::from_kv(&KvMap::load(p)?)?));
        }
        if let (Some(d), Some(m)) = (kv.get_str("data"), kv.get_str("meta")) {
            return Ok(Source::Files {
                data: d.into(),
                meta: m.into(),
            });
        }
        let synth = kv.section("synth");
        if synth.keys().next().is_some() {
            return Ok(Source::Synth(SynthSpec::from_kv(&synth)?));
        }
        Err(FastError::Usage(
            "no data source: pass --data/--meta or --synth-spec".into(),
        ))
    }

    pub fn load(&self, min_len: usize) -> Result<TrafficSeries> {
        match self {
            Source::Files { data, meta } => data::load_series(data, meta, min_len),
            Source::Synth(spec) => synth_generate(spec),
        }
    }

    /// Keys that reproduce this source inside a config snapshot.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        match self {
            Source::Files { data, meta } => {
                kv.set("data", data.display());
                kv.set("meta", meta.display());
            }
            Source::Synth(spec) => {
                for (k, v) in spec.to_kv().iter() {
                    kv.set(&format!("synth.{k}"), v);
                }
            }
        }
        kv
    }
}

/// Everything a training run needs, resolved from flags and config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub source: Source,
}

impl Experiment {
    pub fn resolve(source: &SourceArgs, config: &Path, seed: Option<u64>) -> Result<Self> {
        let kv = KvMap::load(config)?;
        let mut model = ModelConfig::from_kv(&kv)?;
        let mut train = TrainConfig::from_kv(&kv)?;
        if let Some(s) = seed {
            model.seed = s;
            train.seed = s;
        }
        Ok(Experiment {
            model,
            train,
            source: Source::resolve(source, &kv)?,
        })
    }

    pub fn snapshot(&self) -> KvMap {
        let mut kv = self.model.to_kv();
        kv.extend(&self.train.to_kv());
        kv.extend(&self.source.to_kv());
        kv
    }

    /// Loads the series, fixes the data-dependent extents and builds windows.
    pub fn prepare(&mut self) -> Result<(TrafficSeries, Prepared)> {
        let series = self.source.load(self.model.t_hist + self.model.t_horizon)?;
        self.model.n_sensors = series.n_sensors;
        self.model.slots_per_day = series.slots_per_day();
        let prepared = data::prepare(&series, self.model.t_hist, self.model.t_horizon)?;
        Ok((series, prepared))
    }
}

/// Outputs of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FastModel,
    pub history: Vec<EpochRecord>,
    pub initial_val_mae: f64,
    pub best_val_mae: f64,
    pub test: ForecastReport,
    pub baseline: ForecastReport,
    pub train_seconds: f64,
    pub peak_tape_bytes: usize,
}

fn train_experiment(exp: &mut Experiment) -> Result<(TrainOutcome, Prepared)> {
    let (series, prepared) = exp.prepare()?;
    let mut model = FastModel::<f32>::new(&exp.model)?;
    model.meta.sensor_ids = series.sensor_ids.clone();
    let fit = train::fit(model, &prepared, &exp.train)?;
    let eval_bs = exp.train.batch_size.max(64);
    let test = train::evaluate(&fit.model, &prepared.test, &prepared.stats, eval_bs, exp.train.mape_eps)?;
    let baseline = train::persistence_report(&prepared.test, &prepared.stats, exp.train.mape_eps)?;
    Ok((
        TrainOutcome {
            best_val_mae: fit.stopper.best,
            model: fit.model,
            history: fit.history,
            initial_val_mae: fit.initial_val_mae,
            test,
            baseline,
            train_seconds: fit.train_seconds,
            peak_tape_bytes: fit.peak_tape_bytes,
        },
        prepared,
    ))
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut exp = Experiment::resolve(&args.source, &args.config, args.seed)?;
    ensure_dir(&args.out_dir)?;
    let (out, _) = train_experiment(&mut exp)?;
    let dir = &args.out_dir;
    exp.snapshot().save(&dir.join("resolved.cfg"))?;
    out.model.save(&dir.join("model.ckpt"))?;
    train::write_history(&dir.join("history.csv"), &out.history, !runtime::deterministic())?;
    train::write_history(&dir.join("timings.csv"), &out.history, true)?;
    out.test.write(&dir.join("report.csv"))?;
    let mut summary = out.test.to_kv("test");
    summary.extend(&out.baseline.to_kv("baseline"));
    summary.set("initial_val_mae", out.initial_val_mae);
    summary.set("best_val_mae", out.best_val_mae);
    summary.set("epochs", out.history.len());
    summary.set("param_count", param_count(&exp.model));
    summary.set("checkpoint_sha256", out.model.checksum());
    summary.set("deterministic", runtime::deterministic());
    summary.save(&dir.join("summary.txt"))?;
    log::info!(
        "test mae {:.4} (persistence {:.4})",
        out.test.aggregate.mae,
        out.baseline.aggregate.mae
    );
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: ForecastReport,
    pub baseline: Option<ForecastReport>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome> {
    let kv = match &args.config {
        Some(p) => KvMap::load(p)?,
        None => KvMap::new(),
    };
    let source = Source::resolve(&args.source, &kv)?;
    let model = FastModel::<f32>::load(&args.checkpoint)?;
    let cfg = &model.config;
    let series = source.load(cfg.t_hist + cfg.t_horizon)?;
    model.check_compatible(series.n_sensors, cfg.t_hist)?;
    if series.slots_per_day() != cfg.slots_per_day {
        return Err(FastError::Config(format!(
            "data has {} slots per day, checkpoint expects {}",
            series.slots_per_day(),
            cfg.slots_per_day
        )));
    }
    let stats = model.meta.norm;
    let test = data::prepare_with_stats(&series, cfg.t_hist, cfg.t_horizon, stats)?;
    let mape_eps = kv.get_or("mape_eps", crate::metrics::DEFAULT_MAPE_EPS)?;
    let bs = kv.get_or("batch_size", 32usize)?.max(64);
    let (pred, target) = train::predict_dataset(&model, &test, &stats, bs)?;
    let report = ForecastReport::compute(&pred, &target, cfg.t_horizon, cfg.n_sensors, mape_eps)?;
    ensure_dir(&args.out_dir)?;
    report.write(&args.out_dir.join("eval_report.csv"))?;
    let mut summary = report.to_kv("test");
    let baseline = if args.baseline {
        let b = train::persistence_report(&test, &stats, mape_eps)?;
        b.write(&args.out_dir.join("baseline_report.csv"))?;
        summary.extend(&b.to_kv("baseline"));
        Some(b)
    } else {
        None
    };
    summary.save(&args.out_dir.join("eval_summary.txt"))?;
    if args.predictions {
        let (tf, n) = (cfg.t_horizon, cfg.n_sensors);
        let mut s = String::from("sample,horizon,sensor,pred,target\n");
        for (k, (p, t)) in pred.iter().zip(&target).enumerate() {
            let id = &model.meta.sensor_ids[k % n];
            s.push_str(&format!("{},{},{id},{p},{t}\n", k / (tf * n), (k / n) % tf + 1));
        }
        write(&args.out_dir.join("predictions.csv"), &s)?;
    }
    Ok(EvalOutcome { report, baseline })
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub slope: f64,
    pub ci: (f64, f64),
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchOutcome> {
    let spec = BenchSpec {
        variant: args.variant,
        n_list: args.n_list.clone(),
        t_hist: args.t_hist,
        d: args.d,
        d_state: args.d_state,
        heads: args.heads,
        warmup: args.warmup,
        reps: args.reps,
        seed: args.seed,
    };
    spec.validate()?;
    // single-threaded for timing stability
    let was = runtime::deterministic();
    runtime::set_deterministic(true);
    let rows = bench::run(&spec);
    runtime::set_deterministic(was);
    let rows = rows?;
    let (slope, lo, hi) = bench::slope_with_ci(&rows, 1000, args.seed);

    ensure_dir(&args.out_dir)?;
    let tag = args.variant.as_str();
    let mut csv = String::from("variant,N,T_h,d_h,d_s,median_forward_seconds,iqr\n");
    for r in &rows {
        csv.push_str(&format!(
            "{tag},{},{},{},{},{},{}\n",
            r.n,
            r.t_hist,
            r.d_hidden,
            r.d_state,
            r.median(),
            r.iqr()
        ));
    }
    write(&args.out_dir.join(format!("bench_{tag}.csv")), &csv)?;
    let mut kv = KvMap::new();
    kv.set("variant", tag);
    kv.set("slope", slope);
    kv.set("slope_ci_low", lo);
    kv.set("slope_ci_high", hi);
    kv.set("reps", args.reps);
    kv.set("warmup", args.warmup);
    kv.set("threads", 1);
    kv.save(&args.out_dir.join(format!("bench_{tag}_summary.txt")))?;
    println!("{tag}: slope {slope:.3} (95% CI {lo:.3}..{hi:.3})");
    Ok(BenchOutcome {
        rows,
        slope,
        ci: (lo, hi),
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub seed: u64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
    pub train_seconds: f64,
    pub peak_bytes: usize,
    pub step_seconds: Option<f64>,
}

pub const ABLATION_ROWS: [(&str, BlockVariant, bool); 5] = [
    ("fast", BlockVariant::Fast, true),
    ("no-embedding", BlockVariant::Fast, false),
    ("spatial-attention", BlockVariant::SpatialAttention, true),
    ("temporal-mamba", BlockVariant::TemporalMamba, true),
    ("swapped", BlockVariant::Swapped, true),
];

/// Mean wall time of training steps at `n` sensors on synthetic data.
pub fn step_seconds(base: &ModelConfig, train_cfg: &TrainConfig, n: usize, steps: usize) -> Result<f64> {
    let spec = SynthSpec {
        n,
        days: 2,
        seed: base.seed,
        ..Default::default()
    };
    let series = synth_generate(&spec)?;
    let cfg = ModelConfig {
        n_sensors: n,
        ..base.clone()
    };
    let stats = NormStats::fit(&series, &(0..series.len))?;
    let ds = WindowedDataset::build(&series, 0..series.len, SplitTag::Train, cfg.t_hist, cfg.t_horizon, &stats)?;
    let mut model = FastModel::<f32>::new(&cfg)?;
    let mut opt = train::AdamW::new();
    let bs = train_cfg.batch_size.min(ds.len());
    let idx: Vec<usize> = (0..bs).collect();
    let rng = RngState::new(cfg.seed);
    train::train_step(&mut model, &mut opt, &ds, &idx, &stats, train_cfg, rng.split(0))?;
    let t0 = Instant::now();
    for s in 0..steps {
        train::train_step(&mut model, &mut opt, &ds, &idx, &stats, train_cfg, rng.split(s as u64 + 1))?;
    }
    Ok(t0.elapsed().as_secs_f64() / steps.max(1) as f64)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    let base = Experiment::resolve(&args.source, &args.config, args.seed)?;
    ensure_dir(&args.out_dir)?;
    let mut rows = Vec::new();
    for (name, variant, emb) in ABLATION_ROWS {
        let mut exp = base.clone();
        exp.model.variant = variant;
        exp.model.use_embedding = emb;
        log::info!("ablation: {name}");
        let (out, _) = train_experiment(&mut exp)?;
        let best = out
            .history
            .iter()
            .min_by(|a, b| a.val_mae.total_cmp(&b.val_mae))
            .expect("at least one epoch");
        let step = match args.timing_n {
            Some(n) => {
                let cfg = TrainConfig {
                    batch_size: args.timing_batch,
                    ..exp.train.clone()
                };
                Some(step_seconds(&exp.model, &cfg, n, args.timing_steps)?)
            }
            None => None,
        };
        rows.push(AblationRow {
            name: name.to_string(),
            seed: exp.model.seed,
            val_mae: best.val_mae,
            val_rmse: best.val_rmse,
            val_mape: best.val_mape,
            train_seconds: out.train_seconds,
            peak_bytes: out.peak_tape_bytes,
            step_seconds: step,
        });
    }
    let mut csv = String::from(
        "variant,seed,val_mae,val_rmse,val_mape,train_seconds,peak_bytes,timing_n,step_seconds\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.seed,
            r.val_mae,
            r.val_rmse,
            r.val_mape,
            r.train_seconds,
            r.peak_bytes,
            args.timing_n.map_or(String::new(), |n| n.to_string()),
            r.step_seconds.map_or(String::new(), |s| s.to_string())
        ));
    }
    write(&args.out_dir.join("ablation.csv"), &csv)?;
    base.snapshot().save(&args.out_dir.join("resolved.cfg"))?;
    Ok(rows)
}
