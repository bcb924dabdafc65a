use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drf::config::RunConfig;
use drf::encoders::EncoderSpec;
use drf::pipeline::{self, EvalOptions, Layout};
use drf::Result;

#[derive(Parser)]
#[command(name = "drf", version, about = "Residual-corrected vehicle dynamics: data, training, evaluation")]
struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root shared by all stages.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads for scenario- and grid-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Golden scenarios, the loop and randomised training drives from the oracle.
    Generate {
        /// Overrides the golden scripts' duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        training_logs: Option<usize>,
    },
    /// Windows, labels, balances and splits the training drives.
    Prepare {
        /// Label with this DM (`dm.json` or a DM-LB checkpoint).
        #[arg(long)]
        use_existing_dm: Option<PathBuf>,
    },
    /// Trains the learned dynamic model on the training drives.
    TrainDm,
    /// Trains encoder + GP on the prepared dataset.
    TrainRcm {
        /// cnn, dilated_cnn, lstm, attention or transformer (aliases trans, attn, dilated).
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Re-run `prepare` with this DM first.
        #[arg(long)]
        use_existing_dm: Option<PathBuf>,
    },
    /// Grades every model on the golden set; writes metrics CSV/JSON and SVG plots.
    Evaluate {
        /// Bundles to evaluate (default: everything under <out>/models).
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[arg(long)]
        include_loop: bool,
        #[arg(long)]
        no_feedback: bool,
        #[arg(long)]
        no_plots: bool,
    },
    /// Grid search over the configured hyper-parameter grid.
    Tune,
    /// Replays a command CSV through a bundle.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        commands: PathBuf,
        /// Defaults to <out>/simulated.csv.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        no_feedback: bool,
    },
    /// Metrics of a trajectory CSV against a ground-truth CSV, as JSON on stdout.
    Grade { model: PathBuf, ground_truth: PathBuf },
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(drf::DrfError::Invalid("--jobs must be positive".into()));
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let layout = Layout::new(&cli.out);
    match cli.command {
        Command::Generate { duration, training_logs } => {
            if duration.is_some() {
                cfg.generate.duration = duration;
            }
            if let Some(n) = training_logs {
                cfg.generate.training_logs = n;
            }
            let (g, t) = pipeline::generate(&cfg, &layout)?;
            println!("wrote {} golden and {} training logs under {}", g.scenarios.len(), t.scenarios.len(), cli.out.display());
        }
        Command::Prepare { use_existing_dm } => {
            let m = pipeline::prepare(&cfg, &layout, use_existing_dm.as_deref())?;
            println!("dataset: {} train / {} val windows, stride {}, cap {}", m.train, m.val, m.stride, m.cap);
        }
        Command::TrainDm => {
            let (_, s) = pipeline::train_dm(&cfg, &layout)?;
            println!(
                "dm-lb: best epoch {}, held-out one-step rmse {:?} (dm-rb {:?})",
                s.report.best_epoch, s.dm_lb_rmse, s.dm_rb_rmse
            );
        }
        Command::TrainRcm { encoder, epochs, use_existing_dm } => {
            if let Some(e) = encoder {
                cfg = cfg.with_encoder(EncoderSpec::from_name(&e)?);
            }
            if let Some(e) = epochs {
                cfg.rcm.gp.epochs = e;
            }
            cfg.validate()?;
            if let Some(dm) = use_existing_dm {
                pipeline::prepare(&cfg, &layout, Some(&dm))?;
            }
            let (dir, s) = pipeline::train_rcm(&cfg, &layout)?;
            let r = &s.report;
            println!(
                "{}: best epoch {} val loss {:.4} (epoch 0 {:.4}), val MAE {:?} m",
                dir.display(),
                r.best_epoch,
                r.val_loss[r.best_epoch],
                r.val_loss[0],
                r.val_mae
            );
        }
        Command::Evaluate {
            models,
            include_loop,
            no_feedback,
            no_plots,
        } => {
            let opts = EvalOptions {
                models,
                include_loop,
                feedback: no_feedback.then_some(false),
                plots: !no_plots,
            };
            let s = pipeline::evaluate(&cfg, &layout, &opts)?;
            for m in &s.models {
                if let Some(eot) = m.average.as_ref().and_then(|a| a.horizon("EoT")) {
                    println!("{:16} average m-ATE(EoT) {:.3} m", m.model, eot.m_ate);
                }
            }
            if !s.missing.is_empty() {
                eprintln!("missing bundles: {}", s.missing.join(", "));
                return Ok(2);
            }
        }
        Command::Tune => {
            let (board, best) = pipeline::tune(&cfg, &layout)?;
            println!("{} grid points ranked, {} skipped", board.entries.len(), board.skipped.len());
            if best.is_none() {
                eprintln!("no grid point trained successfully");
                return Ok(2);
            }
        }
        Command::Simulate {
            model,
            commands,
            output,
            no_feedback,
        } => {
            let out = output.unwrap_or_else(|| cli.out.join("simulated.csv"));
            let r = pipeline::simulate(&model, &commands, &out, no_feedback.then_some(false))?;
            println!("wrote {} poses to {}", r.trajectory.len(), out.display());
        }
        Command::Grade { model, ground_truth } => {
            let r = pipeline::grade_files(&model, &ground_truth)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
