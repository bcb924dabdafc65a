use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use drf::io::read_trajectory;
use tempfile::TempDir;

const SMALL: &str = r#"{
  "generate": { "training_logs": 6, "training_duration": 60 },
  "rcm": { "gp": { "inducing": 32, "batch": 64, "lr": 0.01, "epochs": 6, "jitter": 1e-6, "init_noise": 0.01, "seed": 0 } },
  "tune": { "grid": { "batch": [64], "inducing": [16, 64], "lr": [0.01, 0.003] }, "epochs": 1 }
}"#;

fn drf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drf")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = drf(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    dir: TempDir,
    config: PathBuf,
}

impl Run {
    fn out(&self) -> &str {
        s(self.dir.path())
    }
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn with_config() -> Run {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, SMALL).unwrap();
    Run { dir, config }
}

/// generate --duration 30, prepare, train-rcm (cnn), evaluate; shared by
/// the tests that only read artifacts.
fn pipeline() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let r = with_config();
        let c = s(&r.config).to_owned();
        ok(&["--config", &c, "--out", r.out(), "generate", "--duration", "30"]);
        ok(&["--config", &c, "--out", r.out(), "prepare"]);
        ok(&["--config", &c, "--out", r.out(), "train-rcm"]);
        ok(&["--config", &c, "--out", r.out(), "evaluate", "--no-plots"]);
        r
    })
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&drf(&["--help"])), 0);
    assert_eq!(code(&drf(&["frobnicate"])), 1);
    assert_eq!(code(&drf(&["generate", "--duration", "abc"])), 1);
}

#[test]
fn validation_failures_exit_one() {
    let r = with_config();
    let bad = r.path("bad.json");
    fs::write(&bad, r#"{"dt": -0.01}"#).unwrap();
    assert_eq!(code(&drf(&["--config", s(&bad), "--out", r.out(), "generate"])), 1);
    fs::write(&bad, r#"{"rcm": {"window": 8}}"#).unwrap();
    assert_eq!(code(&drf(&["--config", s(&bad), "--out", r.out(), "generate"])), 1);
    fs::write(&bad, r#"{"unknown": 1}"#).unwrap();
    assert_eq!(code(&drf(&["--config", s(&bad), "--out", r.out(), "generate"])), 1);
    assert_eq!(code(&drf(&["--out", r.out(), "train-rcm", "--encoder", "gru"])), 1);
    assert_eq!(code(&drf(&["--out", r.out(), "generate", "--duration", "-3"])), 1);
    // Running a stage before its inputs exist is a usage error.
    assert_eq!(code(&drf(&["--out", r.out(), "evaluate"])), 1);
}

#[test]
fn runtime_failures_exit_two() {
    let r = with_config();
    let missing = r.path("no-such-config.json");
    assert_eq!(code(&drf(&["--config", s(&missing), "--out", r.out(), "generate"])), 2);
}

#[test]
fn default_generate_writes_nine_golden_csvs() {
    let r = with_config();
    ok(&["--out", r.out(), "generate", "--training-logs", "1"]);
    let golden = csv_files(&r.path("golden"));
    assert_eq!(golden.len(), 9);
    assert!(golden.contains(&"loop.csv".to_owned()));
    assert!(r.path("golden/scenarios.json").exists());
    assert_eq!(csv_files(&r.path("training")).len(), 1);
}

#[test]
fn duration_override_and_seed_determinism() {
    let (a, b) = (with_config(), with_config());
    for r in [&a, &b] {
        ok(&["--seed", "7", "--out", r.out(), "generate", "--duration", "30", "--training-logs", "2"]);
    }
    for sub in ["golden", "training"] {
        for f in csv_files(&a.path(sub)) {
            let x = fs::read(a.path(sub).join(&f)).unwrap();
            assert_eq!(x, fs::read(b.path(sub).join(&f)).unwrap(), "{f}");
            if sub == "golden" {
                let rows = String::from_utf8(x).unwrap().lines().count() - 1;
                assert_eq!(rows, 3001, "{f}");
            }
        }
    }
}

#[test]
fn pipeline_outputs_rows_per_model_scenario_and_horizon() {
    let r = pipeline();
    let csv = fs::read_to_string(r.path("eval/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), drf::metrics::CSV_HEADER);
    let mut keys = std::collections::HashSet::new();
    let mut eot = std::collections::HashMap::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        assert!(keys.insert((f[0].to_owned(), f[1].to_owned(), f[2].to_owned())), "duplicate {l}");
        if f[2] == "EoT" {
            eot.insert((f[0].to_owned(), f[1].to_owned()), f[5].parse::<f64>().unwrap());
        }
    }
    // dm-rb and drf-cnn; 8 scenarios plus the average; 1s, 5s, 10s, 30s and EoT.
    assert_eq!(keys.len(), 2 * 9 * 5);
    let wins = drf::scenarios::GOLDEN_NAMES
        .iter()
        .filter(|n| eot[&("drf-cnn".to_owned(), n.to_string())] <= eot[&("dm-rb".to_owned(), n.to_string())])
        .count();
    assert!(wins >= 7, "drf-cnn at or below dm-rb on {wins} of 8");
    assert!(r.path("eval/metrics.json").exists());
    assert!(r.path("models/drf-cnn/run_config.json").exists());
}

#[test]
fn simulate_matches_evaluate_trajectory() {
    let r = pipeline();
    let out = r.path("sim/left_turn.csv");
    ok(&["simulate", "--model", s(&r.path("models/drf-cnn")), "--commands", s(&r.path("golden/left_turn.csv")), "--output", s(&out)]);
    let sim = read_trajectory(&out).unwrap();
    let eval = read_trajectory(r.path("eval/trajectories/drf-cnn/left_turn.csv")).unwrap();
    // The log's last command is replayed too, so simulate emits one more pose.
    assert_eq!(sim.trajectory.len(), eval.trajectory.len() + 1);
    for (a, b) in sim.trajectory.poses().iter().zip(eval.trajectory.poses()) {
        assert!(a.distance(b) < 1e-9);
    }
    assert!(sim.sigmas.unwrap().iter().all(|s| s[0] > 0.0 && s[1] > 0.0));
}

#[test]
fn simulate_zero_commands_is_stationary_and_rejects_bad_rows() {
    let r = pipeline();
    let cmds = r.path("zero.csv");
    let mut text = String::from("t,throttle,brake,steering\n");
    for k in 0..300 {
        text.push_str(&format!("{},0,0,0\n", k as f64 * 0.01));
    }
    fs::write(&cmds, &text).unwrap();
    let out = r.path("zero_out.csv");
    ok(&["simulate", "--model", s(&r.path("models/drf-cnn")), "--commands", s(&cmds), "--output", s(&out), "--no-feedback"]);
    let sim = read_trajectory(&out).unwrap();
    assert_eq!(sim.trajectory.len(), 301);
    let p0 = sim.trajectory.poses()[0];
    assert!(sim.trajectory.poses()[..100].iter().all(|p| p.distance(&p0) == 0.0));
    assert!(sim.trajectory.states().is_some());
    assert!(sim.trajectory.poses().iter().all(|p| p.heading == 0.0));

    text.push_str("3.0,0.5,nan,0\n");
    fs::write(&cmds, &text).unwrap();
    let o = drf(&["simulate", "--model", s(&r.path("models/drf-cnn")), "--commands", s(&cmds), "--output", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 302"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn grade_prints_metrics_json() {
    let r = pipeline();
    let gt = r.path("golden/right_turn.csv");
    let self_grade: serde_json::Value = serde_json::from_str(&ok(&["grade", s(&gt), s(&gt)])).unwrap();
    assert_eq!(self_grade["ed"], 0.0);
    assert_eq!(self_grade["dtw"], 0.0);
    let m: drf::metrics::MetricsReport =
        serde_json::from_str(&ok(&["grade", s(&r.path("eval/trajectories/dm-rb/right_turn.csv")), s(&gt)])).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.path("eval/metrics.json")).unwrap()).unwrap();
    let rb = &summary["models"][0];
    assert_eq!(rb["model"], "dm-rb");
    let scen = rb["scenarios"].as_array().unwrap().iter().find(|x| x["scenario"] == "right_turn").unwrap();
    let want: drf::metrics::MetricsReport = serde_json::from_value(scen["report"].clone()).unwrap();
    // Trajectory CSVs are written with full precision, so regrading agrees.
    assert!((m.dtw - want.dtw).abs() < 1e-6 * want.dtw.max(1.0));
    assert!((m.horizon("EoT").unwrap().m_ate - want.horizon("EoT").unwrap().m_ate).abs() < 1e-9);
}

#[test]
fn prepare_is_reproducible_and_tune_ranks_the_grid() {
    let r = pipeline();
    let c = s(&r.config).to_owned();
    let manifest = || fs::read_to_string(r.path("dataset/manifest.json")).unwrap();
    let before = manifest();
    let bin = fs::read(r.path("dataset/windows.bin")).unwrap();
    ok(&["--config", &c, "--out", r.out(), "prepare"]);
    assert_eq!(manifest(), before);
    assert_eq!(fs::read(r.path("dataset/windows.bin")).unwrap(), bin);

    ok(&["--config", &c, "--out", r.out(), "tune"]);
    let board: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.path("tune/leaderboard.json")).unwrap()).unwrap();
    let entries = board["entries"].as_array().unwrap();
    let skipped = board["skipped"].as_array().unwrap();
    assert_eq!((entries.len(), skipped.len()), (2, 2));
    assert!(skipped.iter().all(|p| p["point"]["inducing"] == 64));
    assert!(entries[0]["val_loss"].as_f64().unwrap() <= entries[1]["val_loss"].as_f64().unwrap());
    let best: drf::config::RunConfig = serde_json::from_str(&fs::read_to_string(r.path("tune/best_config.json")).unwrap()).unwrap();
    assert_eq!(best.rcm.gp.inducing, 16);
    assert_eq!(best.rcm.gp.epochs, 6);
}

#[test]
fn transformer_bundle_echoes_encoder_defaults() {
    let r = with_config();
    let c = s(&r.config).to_owned();
    ok(&["--config", &c, "--out", r.out(), "generate", "--duration", "5", "--training-logs", "2"]);
    ok(&["--config", &c, "--out", r.out(), "prepare"]);
    ok(&["--config", &c, "--out", r.out(), "train-rcm", "--encoder", "trans", "--epochs", "1"]);
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.path("models/drf-transformer/config.json")).unwrap()).unwrap();
    let enc = &cfg["rcm"]["encoder"];
    assert_eq!(enc["kind"], "transformer");
    assert_eq!(enc["ff_dim"], 1024);
    assert_eq!(enc["heads"], 1);
    // A bundle path that does not exist is listed and the run fails.
    let o = drf(&["--config", &c, "--out", r.out(), "evaluate", "--no-plots", "--model", s(&r.path("models/drf-missing"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("drf-missing"));
}

#[test]
fn zero_residual_dataset_trains_to_near_zero_mae() {
    let r = with_config();
    let c = s(&r.config).to_owned();
    ok(&["--config", &c, "--out", r.out(), "generate", "--duration", "5", "--training-logs", "3"]);
    // Label with a DM that matches nothing in particular, then zero every target.
    ok(&["--config", &c, "--out", r.out(), "prepare"]);
    let mut ds = drf::datapipe::Dataset::load(r.path("dataset")).unwrap();
    for w in ds.train.iter_mut().chain(ds.val.iter_mut()) {
        w.sample.target = [0.0, 0.0];
    }
    ds.save(r.path("dataset")).unwrap();
    ok(&["--config", &c, "--out", r.out(), "train-rcm", "--epochs", "3"]);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.path("models/drf-cnn/train_report.json")).unwrap()).unwrap();
    for t in 0..2 {
        assert!(rep["report"]["val_mae"][t].as_f64().unwrap() < 0.02, "{rep}");
    }
}

#[test]
fn train_dm_writes_checkpoint_and_is_graded() {
    let r = with_config();
    let c = s(&r.config).to_owned();
    ok(&["--config", &c, "--out", r.out(), "generate", "--duration", "30"]);
    ok(&["--config", &c, "--out", r.out(), "train-dm"]);
    for f in ["dm.json", "dm_lb.ckpt", "train_dm_report.json", "run_config.json"] {
        assert!(r.path("dm").join(f).exists(), "missing dm/{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.path("dm/train_dm_report.json")).unwrap()).unwrap();
    let rep = &report["report"];
    let best = rep["val_loss"][rep["best_epoch"].as_u64().unwrap() as usize].as_f64().unwrap();
    assert!(10.0 * best < rep["baseline_val_loss"].as_f64().unwrap(), "{rep}");
    ok(&["--config", &c, "--out", r.out(), "evaluate", "--no-plots"]);
    let csv = fs::read_to_string(r.path("eval/metrics.csv")).unwrap();
    let lb: Vec<f64> = csv
        .lines()
        .filter(|l| l.starts_with("dm-lb,") && l.contains(",EoT,"))
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(lb.len(), 9);
    assert!(lb.iter().all(|m| m.is_finite() && *m < 100.0), "{lb:?}");
}
