//! Commands end to end: exit codes, artifacts and reproducibility.

use std::path::{Path, PathBuf};

use fast_core::cli::main_with_args;
use fast_core::kv::KvMap;
use fast_core::numerics::runtime;

const CONFIG: &str = "t_hist=6\nt_horizon=3\nd=4\nblocks=1\nheads=2\nd_state=4\n\
                      batch_size=8\nmax_epochs=2\nmax_batches_per_epoch=3\n";
const SPEC: &str = "N=4\ndays=3\nseed=7\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        runtime::set_deterministic(true);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.cfg"), CONFIG).unwrap();
        std::fs::write(dir.path().join("small.spec"), SPEC).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> i32 {
        main_with_args(std::iter::once("fast").chain(args.iter().copied()))
    }

    fn train(&self, out: &str) -> i32 {
        let (spec, cfg, out) = (self.arg("small.spec"), self.arg("run.cfg"), self.arg(out));
        self.run(&["train", "--synth-spec", &spec, "--config", &cfg, "--out-dir", &out, "--seed", "7"])
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn help_and_version_succeed() {
    let f = Fixture::new();
    assert_eq!(f.run(&["--help"]), 0);
    assert_eq!(f.run(&["--version"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    let f = Fixture::new();
    assert_eq!(f.run(&[]), 1);
    assert_eq!(f.run(&["frobnicate"]), 1);
    let spec = f.arg("small.spec");
    assert_eq!(f.run(&["train", "--synth-spec", &spec, "--out-dir", &f.arg("o")]), 1);
    let out = f.arg("b");
    assert_eq!(f.run(&["bench", "--n-list", "64", "--out-dir", &out]), 1);
    assert_eq!(f.run(&["bench", "--n-list", "8,16,32,64,128", "--reps", "3", "--out-dir", &out]), 1);
    assert_eq!(f.run(&["bench", "--variant", "swapped", "--n-list", "8,16,32,64,128", "--out-dir", &out]), 1);
}

#[test]
fn missing_source_is_usage_error() {
    let f = Fixture::new();
    let (cfg, out) = (f.arg("run.cfg"), f.arg("o"));
    assert_eq!(f.run(&["train", "--config", &cfg, "--out-dir", &out]), 1);
}

#[test]
fn bad_data_and_config_exit_two() {
    let f = Fixture::new();
    let (cfg, out) = (f.arg("run.cfg"), f.arg("o"));
    let missing = f.arg("nope.csv");
    assert_eq!(f.run(&["train", "--data", &missing, "--meta", &missing, "--config", &cfg, "--out-dir", &out]), 2);

    std::fs::write(f.path("bad.cfg"), "d=0\n").unwrap();
    let (spec, bad) = (f.arg("small.spec"), f.arg("bad.cfg"));
    assert_eq!(f.run(&["train", "--synth-spec", &spec, "--config", &bad, "--out-dir", &out]), 2);

    std::fs::write(f.path("ragged.csv"), "1,2\n3\n").unwrap();
    std::fs::write(f.path("ragged.meta"), "interval_minutes=5\nstart_slot=0\nstart_dow=0\nsensor_ids=a,b\n").unwrap();
    let (d, m) = (f.arg("ragged.csv"), f.arg("ragged.meta"));
    assert_eq!(f.run(&["train", "--data", &d, "--meta", &m, "--config", &cfg, "--out-dir", &out]), 2);
}

#[test]
fn divergent_training_exits_three() {
    let f = Fixture::new();
    std::fs::write(f.path("hot.cfg"), format!("{CONFIG}lr=1e30\n")).unwrap();
    let (spec, cfg, out) = (f.arg("small.spec"), f.arg("hot.cfg"), f.arg("o"));
    assert_eq!(f.run(&["train", "--synth-spec", &spec, "--config", &cfg, "--out-dir", &out]), 3);
}

#[test]
fn defaults_echo_the_grid() {
    let text = fast_core::cli::defaults_text();
    assert!(text.contains("d in {32,64}"), "{text}");
    assert!(text.contains("blocks in {1,2,3}"), "{text}");
    assert!(text.contains("heads in {4,8}"), "{text}");
    let kv = KvMap::parse(&text).unwrap();
    assert_eq!(kv.get::<f64>("lr").unwrap(), Some(1e-3));
    assert_eq!(kv.get::<usize>("batch_size").unwrap(), Some(32));
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let f = Fixture::new();
    assert_eq!(f.train("a"), 0);
    assert_eq!(f.train("b"), 0);
    for name in ["resolved.cfg", "model.ckpt", "history.csv", "timings.csv", "report.csv", "summary.txt"] {
        assert!(f.path("a").join(name).exists(), "{name}");
    }
    let history = read(&f.path("a/history.csv"));
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_mae,val_rmse,val_mape,seconds"));
    assert_eq!(history, read(&f.path("b/history.csv")));
    assert_eq!(
        std::fs::read(f.path("a/model.ckpt")).unwrap(),
        std::fs::read(f.path("b/model.ckpt")).unwrap()
    );
    // horizon rows plus header and aggregate
    assert_eq!(read(&f.path("a/report.csv")).lines().count(), 3 + 2);
}

#[test]
fn resolved_config_reruns_the_experiment() {
    let f = Fixture::new();
    assert_eq!(f.train("a"), 0);
    let (cfg, out) = (f.arg("a/resolved.cfg"), f.arg("again"));
    assert_eq!(f.run(&["train", "--config", &cfg, "--out-dir", &out]), 0);
    assert_eq!(read(&f.path("a/history.csv")), read(&f.path("again/history.csv")));
}

#[test]
fn eval_reproduces_training_test_metrics() {
    let f = Fixture::new();
    assert_eq!(f.train("a"), 0);
    let (spec, ckpt, out) = (f.arg("small.spec"), f.arg("a/model.ckpt"), f.arg("e"));
    let code = f.run(&[
        "eval", "--synth-spec", &spec, "--checkpoint", &ckpt, "--out-dir", &out, "--baseline", "--predictions",
    ]);
    assert_eq!(code, 0);
    assert_eq!(read(&f.path("a/report.csv")), read(&f.path("e/eval_report.csv")));
    let train = KvMap::load(&f.path("a/summary.txt")).unwrap();
    let eval = KvMap::load(&f.path("e/eval_summary.txt")).unwrap();
    for key in ["test.mae", "test.rmse", "test.mape", "baseline.mae"] {
        assert_eq!(train.get_str(key), eval.get_str(key), "{key}");
    }
    let preds = read(&f.path("e/predictions.csv"));
    assert_eq!(preds.lines().next(), Some("sample,horizon,sensor,pred,target"));
}

#[test]
fn eval_rejects_mismatched_data_and_corrupt_checkpoints() {
    let f = Fixture::new();
    assert_eq!(f.train("a"), 0);
    std::fs::write(f.path("wide.spec"), "N=5\ndays=3\n").unwrap();
    let (wide, ckpt, out) = (f.arg("wide.spec"), f.arg("a/model.ckpt"), f.arg("e"));
    assert_eq!(f.run(&["eval", "--synth-spec", &wide, "--checkpoint", &ckpt, "--out-dir", &out]), 2);

    let mut bytes = std::fs::read(f.path("a/model.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(f.path("bad.ckpt"), bytes).unwrap();
    let (spec, bad) = (f.arg("small.spec"), f.arg("bad.ckpt"));
    assert_eq!(f.run(&["eval", "--synth-spec", &spec, "--checkpoint", &bad, "--out-dir", &out]), 2);
}

#[test]
fn bench_writes_rows_and_slope() {
    let f = Fixture::new();
    let out = f.arg("b");
    let code = f.run(&[
        "bench", "--n-list", "4,8,16,32,64", "--t-hist", "4", "--d", "4", "--d-state", "4", "--heads", "2",
        "--out-dir", &out,
    ]);
    assert_eq!(code, 0);
    let csv = read(&f.path("b/bench_fast.csv"));
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("variant,N,T_h,d_h,d_s,median_forward_seconds,iqr"));
    let summary = KvMap::load(&f.path("b/bench_fast_summary.txt")).unwrap();
    assert!(summary.get::<f64>("slope").unwrap().is_some());
    assert_eq!(summary.get::<usize>("threads").unwrap(), Some(1));
}

#[test]
fn ablate_trains_every_variant_on_one_seed() {
    let f = Fixture::new();
    std::fs::write(f.path("one.cfg"), CONFIG.replace("max_epochs=2", "max_epochs=1")).unwrap();
    let (spec, cfg, out) = (f.arg("small.spec"), f.arg("one.cfg"), f.arg("ab"));
    assert_eq!(f.run(&["ablate", "--synth-spec", &spec, "--config", &cfg, "--out-dir", &out, "--seed", "3"]), 0);
    let csv = read(&f.path("ab/ablation.csv"));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(names, ["fast", "no-embedding", "spatial-attention", "temporal-mamba", "swapped"]);
    assert!(rows.iter().all(|r| r[1] == "3"));
}
