//! The stages behind the `drf` command line. Each stage reads and writes a
//! fixed layout under one output directory (see [`Layout`]) and echoes the
//! run configuration into what it writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DmChoice, RunConfig, TuneGrid};
use crate::datapipe::{self, Dataset, DatasetManifest, IngestedLog};
use crate::dynamics::{rollout_log, tick_samples, train_dm_lb, DmTrainReport, DynamicModel, MlpDynamicModel};
use crate::encoders::EncoderSpec;
use crate::error::{invalid, DrfError, Result};
use crate::io::{read_commands, read_log, read_trajectory, write_log, write_trajectory};
use crate::metrics::{self, MetricsReport};
use crate::plot::{thin, Plot};
use crate::rcm::{self, drf_rollout, drf_rollout_log, load_dm, save_dm, DrfModel, RcmTrainReport, RolloutOptions};
use crate::scenarios::{generate_golden_set, generate_training_set, OracleVehicle, Scenario, ScenarioKind};
use crate::stats::rmse;
use crate::vehicle::{LogRecord, Trajectory};

/// Directory layout under `--out`.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn golden(&self) -> PathBuf {
        self.root.join("golden")
    }
    pub fn training(&self) -> PathBuf {
        self.root.join("training")
    }
    pub fn dm(&self) -> PathBuf {
        self.root.join("dm")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn model(&self, encoder: &EncoderSpec) -> PathBuf {
        self.models().join(format!("drf-{}", encoder.name()))
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn tune(&self) -> PathBuf {
        self.root.join("tune")
    }
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(dir.join("run_config.json"), cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub name: String,
    pub kind: ScenarioKind,
    pub file: String,
    pub rows: usize,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioIndex {
    pub seed: u64,
    pub dt: f64,
    pub scenarios: Vec<ScenarioEntry>,
}

fn write_scenarios(dir: &Path, set: &[Scenario], cfg: &RunConfig) -> Result<ScenarioIndex> {
    fs::create_dir_all(dir)?;
    let entries = set
        .par_iter()
        .map(|s| {
            let file = format!("{}.csv", s.name);
            write_log(dir.join(&file), &s.log)?;
            Ok(ScenarioEntry {
                name: s.name.clone(),
                kind: s.kind,
                file,
                rows: s.log.len(),
                duration: s.log.last().map(|r| r.t).unwrap_or(0.0) - s.log.first().map(|r| r.t).unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = ScenarioIndex {
        seed: cfg.seed,
        dt: cfg.dt,
        scenarios: entries,
    };
    write_json(dir.join("scenarios.json"), &index)?;
    echo_config(dir, cfg)?;
    Ok(index)
}

/// Golden set plus loop into `golden/`, randomised drives into `training/`.
pub fn generate(cfg: &RunConfig, layout: &Layout) -> Result<(ScenarioIndex, ScenarioIndex)> {
    cfg.validate()?;
    let oracle = OracleVehicle::default();
    let golden = generate_golden_set(&oracle, cfg.seed, cfg.dt, cfg.generate.duration)?;
    let train = generate_training_set(&oracle, cfg.seed, cfg.dt, cfg.generate.training_logs, cfg.generate.training_duration)?;
    Ok((write_scenarios(&layout.golden(), &golden, cfg)?, write_scenarios(&layout.training(), &train, cfg)?))
}

pub fn read_index(dir: &Path) -> Result<ScenarioIndex> {
    let path = dir.join("scenarios.json");
    let text = fs::read_to_string(&path).map_err(|e| invalid(format!("cannot read {}: {e}; run `drf generate` first", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn scenario_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_index(dir)?.scenarios.iter().map(|s| dir.join(&s.file)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmTrainSummary {
    pub config: RunConfig,
    pub report: DmTrainReport,
    pub train_logs: usize,
    pub val_logs: usize,
    /// One-step RMSE on held-out ticks: [acceleration, heading rate].
    pub dm_lb_rmse: [f64; 2],
    pub dm_rb_rmse: [f64; 2],
}

fn one_step_rmse(dm: &DynamicModel, logs: &[IngestedLog], dt: f64) -> Result<[f64; 2]> {
    let (mut pa, mut ta, mut pr, mut tr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for l in logs {
        for s in tick_samples(&l.records, dt) {
            let (a, r) = dm.tick(&s.command, &s.state)?;
            pa.push(a);
            pr.push(r);
            ta.push(s.target[0]);
            tr.push(s.target[1]);
        }
    }
    Ok([rmse(&pa, &ta), rmse(&pr, &tr)])
}

/// Trains DM-LB on the training logs; the last `val_fraction` of logs
/// validate. Writes `dm/dm.json`, `dm/dm_lb.ckpt` and a report.
pub fn train_dm(cfg: &RunConfig, layout: &Layout) -> Result<(MlpDynamicModel, DmTrainSummary)> {
    cfg.validate()?;
    let logs = datapipe::ingest(&scenario_paths(&layout.training())?)?;
    if logs.is_empty() {
        return Err(DrfError::EmptyDataset("no training logs".into()));
    }
    let n_val = ((logs.len() as f64 * cfg.dm.val_fraction).round() as usize).min(logs.len() - 1);
    let (tr, va) = logs.split_at(logs.len() - n_val);
    let samples = |ls: &[IngestedLog]| ls.iter().flat_map(|l| tick_samples(&l.records, cfg.dt)).collect::<Vec<_>>();
    let (train, val) = (samples(tr), samples(va));
    let (model, report) = train_dm_lb(&train, if val.is_empty() { &train } else { &val }, &cfg.dm.train)?;
    let held = if va.is_empty() { tr } else { va };
    let summary = DmTrainSummary {
        config: cfg.clone(),
        report,
        train_logs: tr.len(),
        val_logs: va.len(),
        dm_lb_rmse: one_step_rmse(&DynamicModel::Learned(model.clone()), held, cfg.dt)?,
        dm_rb_rmse: one_step_rmse(&DynamicModel::RuleBased(cfg.rule_based()), held, cfg.dt)?,
    };
    let dir = layout.dm();
    save_dm(&DynamicModel::Learned(model.clone()), &dir)?;
    write_json(dir.join("train_dm_report.json"), &summary)?;
    echo_config(&dir, cfg)?;
    Ok((model, summary))
}

/// The labelling DM: an explicit `dm.json`/checkpoint path, the rule-based
/// model, or DM-LB (trained on demand when `dm/` has none).
pub fn resolve_dm(cfg: &RunConfig, layout: &Layout, existing: Option<&Path>) -> Result<DynamicModel> {
    if let Some(p) = existing {
        return if p.is_dir() {
            load_dm(p)
        } else if p.extension().is_some_and(|e| e == "json") {
            load_dm(p.parent().unwrap_or(Path::new(".")))
        } else {
            Ok(DynamicModel::Learned(MlpDynamicModel::load(p)?))
        };
    }
    match cfg.dm.kind {
        DmChoice::RuleBased => Ok(DynamicModel::RuleBased(cfg.rule_based())),
        DmChoice::Learned if layout.dm().join("dm.json").exists() => load_dm(layout.dm()),
        DmChoice::Learned => Ok(DynamicModel::Learned(train_dm(cfg, layout)?.0)),
    }
}

/// Windows, labels, balances and splits the training logs into `dataset/`.
pub fn prepare(cfg: &RunConfig, layout: &Layout, existing_dm: Option<&Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let logs = datapipe::ingest(&scenario_paths(&layout.training())?)?;
    let dm = resolve_dm(cfg, layout, existing_dm)?;
    let r = &cfg.rcm;
    let mut ds = datapipe::prepare(&logs, &dm, r.window, r.overlap, cfg.dt, r.sanity_bound, &cfg.split)?;
    let dir = layout.dataset();
    ds.save(&dir)?;
    save_dm(&dm, &dir)?;
    echo_config(&dir, cfg)?;
    Ok(ds.manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcmTrainSummary {
    pub config: RunConfig,
    pub report: RcmTrainReport,
    pub dataset_sha256: String,
}

/// Trains the RCM on `dataset/` with the dataset's DM; the bundle goes to
/// `models/drf-<encoder>/`.
pub fn train_rcm(cfg: &RunConfig, layout: &Layout) -> Result<(PathBuf, RcmTrainSummary)> {
    cfg.validate()?;
    let dir = layout.dataset();
    let ds = Dataset::load(&dir).map_err(|e| match e {
        DrfError::Io(io) => invalid(format!("cannot read dataset in {}: {io}; run `drf prepare` first", dir.display())),
        other => other,
    })?;
    if ds.manifest.window != cfg.rcm.window {
        return Err(invalid(format!("dataset window {} differs from configured {}", ds.manifest.window, cfg.rcm.window)));
    }
    let dm = load_dm(&dir)?;
    let (model, report) = rcm::train_rcm(dm, &ds.train_samples(), &ds.val_samples(), &cfg.rcm)?;
    let out = layout.model(&cfg.rcm.encoder);
    model.save(&out)?;
    let summary = RcmTrainSummary {
        config: cfg.clone(),
        report,
        dataset_sha256: ds.manifest.windows_sha256.clone(),
    };
    write_json(out.join("train_report.json"), &summary)?;
    echo_config(&out, cfg)?;
    Ok((out, summary))
}

enum EvalModel {
    Dm(DynamicModel),
    Drf(Box<DrfModel>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub scenario: String,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub scenarios: Vec<ScenarioMetrics>,
    /// Mean over the golden scenarios (the loop is excluded).
    pub average: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config: RunConfig,
    pub models: Vec<ModelMetrics>,
    /// Requested bundles that could not be loaded.
    pub missing: Vec<String>,
}

impl EvalSummary {
    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == name)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Bundles to evaluate; every directory under `models/` when empty.
    pub models: Vec<PathBuf>,
    pub include_loop: bool,
    /// Overrides each bundle's feedback setting.
    pub feedback: Option<bool>,
    pub plots: bool,
}

fn rollout_opts(model: &DrfModel, feedback: Option<bool>) -> RolloutOptions {
    RolloutOptions {
        feedback: feedback.unwrap_or(model.config.feedback),
        stride_eval: model.config.stride_eval,
    }
}

/// Grades DM-RB, DM-LB (when trained) and every DRF bundle on the golden set.
pub fn evaluate(cfg: &RunConfig, layout: &Layout, opts: &EvalOptions) -> Result<EvalSummary> {
    cfg.validate()?;
    let index = read_index(&layout.golden())?;
    let scenarios: Vec<(String, ScenarioKind, Vec<LogRecord>)> = index
        .scenarios
        .iter()
        .filter(|s| s.kind == ScenarioKind::Golden || (opts.include_loop && s.kind == ScenarioKind::Loop))
        .map(|s| Ok((s.name.clone(), s.kind, read_log(layout.golden().join(&s.file))?.records)))
        .collect::<Result<_>>()?;

    let mut models: Vec<(String, EvalModel)> = vec![("dm-rb".into(), EvalModel::Dm(DynamicModel::RuleBased(cfg.rule_based())))];
    if layout.dm().join("dm.json").exists() {
        models.push(("dm-lb".into(), EvalModel::Dm(load_dm(layout.dm())?)));
    }
    let bundles = if opts.models.is_empty() {
        let mut dirs: Vec<PathBuf> = match fs::read_dir(layout.models()) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("config.json").exists()).collect(),
            Err(_) => Vec::new(),
        };
        dirs.sort();
        dirs
    } else {
        opts.models.clone()
    };
    let mut missing = Vec::new();
    for b in bundles {
        match DrfModel::load(&b) {
            Ok(m) => {
                let name = b.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "drf".into());
                models.push((name, EvalModel::Drf(Box::new(m))));
            }
            Err(e) => {
                log::error!("skipping bundle {}: {e}", b.display());
                missing.push(b.display().to_string());
            }
        }
    }

    let eval_dir = layout.eval();
    fs::create_dir_all(eval_dir.join("trajectories"))?;
    let mut results = Vec::new();
    let mut all_runs: Vec<Vec<(Trajectory, Option<Vec<[f64; 2]>>)>> = Vec::new();
    for (name, model) in &models {
        let runs = scenarios
            .par_iter()
            .map(|(_, _, log)| -> Result<(Trajectory, Option<Vec<[f64; 2]>>)> {
                match model {
                    EvalModel::Dm(dm) => Ok((rollout_log(dm, log, cfg.dt)?, None)),
                    EvalModel::Drf(m) => {
                        let r = drf_rollout_log(m, log, cfg.dt, rollout_opts(m, opts.feedback))?;
                        Ok((r.trajectory, Some(r.sigmas)))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut per = Vec::new();
        let dir = eval_dir.join("trajectories").join(name);
        fs::create_dir_all(&dir)?;
        for ((scenario, kind, log), (traj, sig)) in scenarios.iter().zip(&runs) {
            let gt = Trajectory::from_log(log)?;
            let report = metrics::grade(traj, sig.as_deref(), &gt)?;
            write_trajectory(dir.join(format!("{scenario}.csv")), traj, sig.as_deref().unwrap_or(&[]))?;
            per.push((ScenarioMetrics {
                scenario: scenario.clone(),
                report,
            }, *kind));
        }
        let golden: Vec<MetricsReport> = per.iter().filter(|(_, k)| *k == ScenarioKind::Golden).map(|(s, _)| s.report.clone()).collect();
        results.push(ModelMetrics {
            model: name.clone(),
            average: metrics::average(&golden),
            scenarios: per.into_iter().map(|(s, _)| s).collect(),
        });
        all_runs.push(runs);
    }

    let mut csv = Vec::new();
    writeln!(csv, "{}", metrics::CSV_HEADER)?;
    for m in &results {
        for s in &m.scenarios {
            metrics::write_csv_rows(&mut csv, &m.model, &s.scenario, &s.report)?;
        }
        if let Some(a) = &m.average {
            metrics::write_csv_rows(&mut csv, &m.model, "average", a)?;
        }
    }
    fs::write(eval_dir.join("metrics.csv"), csv)?;
    let summary = EvalSummary {
        config: cfg.clone(),
        models: results,
        missing,
    };
    write_json(eval_dir.join("metrics.json"), &summary)?;
    echo_config(&eval_dir, cfg)?;
    if opts.plots {
        write_plots(&eval_dir.join("plots"), &scenarios, &models, &all_runs)?;
    }
    Ok(summary)
}

fn write_plots(
    dir: &Path,
    scenarios: &[(String, ScenarioKind, Vec<LogRecord>)],
    models: &[(String, EvalModel)],
    runs: &[Vec<(Trajectory, Option<Vec<[f64; 2]>>)>],
) -> Result<()> {
    const MAX_POINTS: usize = 1500;
    fs::create_dir_all(dir)?;
    for (k, (scenario, _, log)) in scenarios.iter().enumerate() {
        let gt = Trajectory::from_log(log)?;
        let mut plot = Plot::new(&format!("{scenario}: trajectories"), "x [m]", "y [m]").line("ground truth", thin(&gt.points(), MAX_POINTS));
        plot.equal_aspect = true;
        for (m, (name, _)) in models.iter().enumerate() {
            plot = plot.line(name, thin(&runs[m][k].0.points(), MAX_POINTS));
        }
        fs::write(dir.join(format!("{scenario}_trajectories.svg")), plot.to_svg())?;
        let gp = gt.points();
        let idx: Vec<usize> = thin(&(0..gt.len()).collect::<Vec<_>>(), MAX_POINTS);
        let t: Vec<f64> = idx.iter().map(|&i| gt.timestamps()[i]).collect();
        for (m, (name, _)) in models.iter().enumerate() {
            let (traj, Some(sig)) = &runs[m][k] else { continue };
            let tp = traj.points();
            for (axis, label) in [(0usize, "x"), (1, "y")] {
                let err: Vec<[f64; 2]> = idx.iter().zip(&t).map(|(&i, &ti)| [ti, gp[i][axis] - tp[i][axis]]).collect();
                let hi: Vec<f64> = idx.iter().map(|&i| 2.0 * sig[i][axis]).collect();
                let lo: Vec<f64> = hi.iter().map(|v| -v).collect();
                let svg = Plot::new(&format!("{scenario} / {name}: {label} residual"), "t [s]", &format!("{label} error [m]"))
                    .band("2 sigma", t.clone(), lo, hi)
                    .line("ground truth - corrected", err)
                    .to_svg();
                fs::write(dir.join(format!("{scenario}_{name}_sigma_{label}.svg")), svg)?;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub batch: usize,
    pub inducing: usize,
    pub lr: f64,
    pub encoder: EncoderSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub point: GridPoint,
    /// Best per-sample negated validation ELBO.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub point: GridPoint,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    /// Sorted by ascending validation loss.
    pub entries: Vec<LeaderboardEntry>,
    pub skipped: Vec<SkippedPoint>,
}

fn with_encoder_axis(spec: &EncoderSpec, dropout: Option<f64>, latent: Option<usize>, kernel_size: Option<usize>, ff: Option<usize>) -> EncoderSpec {
    let mut s = spec.clone();
    match &mut s {
        EncoderSpec::Cnn { kernel, latent_dim, .. }
        | EncoderSpec::DilatedCnn { kernel, latent_dim, .. }
        | EncoderSpec::Attention { kernel, latent_dim, .. } => {
            if let Some(l) = latent {
                *latent_dim = l;
            }
            if let Some(k) = kernel_size {
                *kernel = k;
            }
        }
        EncoderSpec::Lstm { latent_dim, .. } => {
            if let Some(l) = latent {
                *latent_dim = l;
            }
        }
        EncoderSpec::Transformer { d_model, ff_dim, dropout: p, .. } => {
            if let Some(l) = latent {
                *d_model = l;
            }
            if let Some(f) = ff {
                *ff_dim = f;
            }
            if let Some(d) = dropout {
                *p = d;
            }
        }
    }
    s
}

fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

/// Cartesian product of the grid axes applied to `base`.
pub fn expand_grid(base: &RunConfig, grid: &TuneGrid) -> Vec<GridPoint> {
    let gp = &base.rcm.gp;
    let mut out = Vec::new();
    for b in axis(&grid.batch) {
        for l in axis(&grid.inducing) {
            for lr in axis(&grid.lr) {
                for d in axis(&grid.dropout) {
                    for z in axis(&grid.latent_dim) {
                        for k in axis(&grid.kernel) {
                            for f in axis(&grid.ff_dim) {
                                let p = GridPoint {
                                    batch: b.unwrap_or(gp.batch),
                                    inducing: l.unwrap_or(gp.inducing),
                                    lr: lr.unwrap_or(gp.lr),
                                    encoder: with_encoder_axis(&base.rcm.encoder, d, z, k, f),
                                };
                                if !out.contains(&p) {
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn apply_point(base: &RunConfig, p: &GridPoint, epochs: usize) -> RunConfig {
    let mut c = base.clone();
    c.rcm.gp.batch = p.batch;
    c.rcm.gp.inducing = p.inducing;
    c.rcm.gp.lr = p.lr;
    c.rcm.gp.epochs = epochs;
    c.rcm.encoder = p.encoder.clone();
    c
}

/// Runs `score` on every grid point in parallel; invalid points are skipped
/// with the validation message. Entries are sorted by ascending score.
pub fn run_grid(base: &RunConfig, points: &[GridPoint], epochs: usize, score: impl Fn(&RunConfig) -> Result<f64> + Sync) -> Leaderboard {
    let results: Vec<(GridPoint, std::result::Result<f64, String>)> = points
        .par_iter()
        .map(|p| {
            let cfg = apply_point(base, p, epochs);
            let r = cfg.validate().and_then(|_| score(&cfg)).map_err(|e| e.to_string());
            (p.clone(), r)
        })
        .collect();
    let mut board = Leaderboard {
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    for (point, r) in results {
        match r {
            Ok(val_loss) if val_loss.is_finite() => board.entries.push(LeaderboardEntry { point, val_loss }),
            Ok(v) => board.skipped.push(SkippedPoint {
                point,
                reason: format!("non-finite validation loss {v}"),
            }),
            Err(reason) => board.skipped.push(SkippedPoint { point, reason }),
        }
    }
    board.entries.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
    board
}

/// Grid search on `dataset/` with shortened training; writes
/// `tune/leaderboard.json` and the winner as `tune/best_config.json`.
pub fn tune(cfg: &RunConfig, layout: &Layout) -> Result<(Leaderboard, Option<RunConfig>)> {
    cfg.validate()?;
    let dir = layout.dataset();
    let ds = Dataset::load(&dir)?;
    let dm = load_dm(&dir)?;
    let (train, val) = (ds.train_samples(), ds.val_samples());
    let points = expand_grid(cfg, &cfg.tune.grid);
    let board = run_grid(cfg, &points, cfg.tune.epochs, |c| {
        let (_, report) = rcm::train_rcm(dm.clone(), &train, &val, &c.rcm)?;
        Ok(report.val_loss[report.best_epoch])
    });
    let best = board.entries.first().map(|e| apply_point(cfg, &e.point, cfg.rcm.gp.epochs));
    let out = layout.tune();
    fs::create_dir_all(&out)?;
    write_json(out.join("leaderboard.json"), &board)?;
    if let Some(b) = &best {
        write_json(out.join("best_config.json"), b)?;
    }
    echo_config(&out, cfg)?;
    Ok((board, best))
}

/// Replays a command CSV through a DRF bundle and writes
/// `t,x,y,heading,speed,sigma_x,sigma_y`.
pub fn simulate(bundle: &Path, commands: &Path, output: &Path, feedback: Option<bool>) -> Result<rcm::DrfRollout> {
    let model = DrfModel::load(bundle)?;
    let script = read_commands(commands)?;
    let r = drf_rollout(&model, script.start_pose, script.start_state, &script.commands, script.t0, script.dt, rollout_opts(&model, feedback))?;
    if let Some(parent) = output.parent() {
        fs::create_dir_all(parent)?;
    }
    write_trajectory(output, &r.trajectory, &r.sigmas)?;
    Ok(r)
}

/// Metrics of a model trajectory CSV against a ground-truth CSV.
pub fn grade_files(model: &Path, gt: &Path) -> Result<MetricsReport> {
    let m = read_trajectory(model)?;
    let g = read_trajectory(gt)?;
    let n = m.trajectory.len().min(g.trajectory.len());
    let (mt, gt) = (truncate(&m.trajectory, n)?, truncate(&g.trajectory, n)?);
    let sig = m.sigmas.as_ref().map(|s| &s[..n]).filter(|s| s.iter().all(|v| v[0] > 0.0 && v[1] > 0.0));
    metrics::grade(&mt, sig, &gt)
}

fn truncate(t: &Trajectory, n: usize) -> Result<Trajectory> {
    if t.len() == n {
        return Ok(t.clone());
    }
    Trajectory::new(t.timestamps()[..n].to_vec(), t.poses()[..n].to_vec(), t.states().map(|s| s[..n].to_vec()))
}

/// Process exit code class of an error: 1 for invalid input or
/// configuration, 2 for failures while running.
pub fn exit_code(e: &DrfError) -> i32 {
    match e {
        DrfError::Invalid(_)
        | DrfError::Parse { .. }
        | DrfError::WindowTooShort { .. }
        | DrfError::InducingNotBelowBatch { .. }
        | DrfError::Unnormalized(_)
        | DrfError::Json(_)
        | DrfError::Csv(_) => 1,
        DrfError::NonFinite(_) | DrfError::Cholesky { .. } | DrfError::EmptyDataset(_) | DrfError::Autodiff(_) | DrfError::Io(_) => 2,
    }
}
