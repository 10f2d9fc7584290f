use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bk2f::kv::KvDoc;
use bk2f::pipeline::{cmd_evaluate, cmd_generate, cmd_run, cmd_train, RunConfig, Which, MODEL_FILE};
use bk2f::{DriftMode, EtaSource, EvalReport, Exec};
use clap::{Args, Parser, Subcommand, ValueEnum};

const DEFAULT_OUT: &str = "bk2f-out";

#[derive(Parser, Debug)]
#[command(
    name = "bk2f",
    version,
    about = "Branching two-factor Black-Karasinski datasets and next-step quantile predictors"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override any config key, e.g. `--set params_train.alpha1=0.18`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Master seed for the training dataset; the others derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Lift the per-level node cap.
    #[arg(long, global = true)]
    allow_large: bool,

    #[arg(long, global = true, value_enum)]
    eta_source: Option<EtaArg>,

    #[arg(long, global = true, value_enum)]
    drift_mode: Option<DriftArg>,

    /// Number of branching steps.
    #[arg(long, global = true)]
    depth: Option<usize>,

    /// Scenarios per dataset.
    #[arg(long, global = true)]
    scenarios: Option<usize>,

    /// Output directory (falls back to the config, then $BK2F_OUT).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EtaArg {
    AsPrinted,
    Derivation,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DriftArg {
    None,
    Indexed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WhichArg {
    Train,
    Valid,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate and write percentile datasets.
    Generate {
        #[arg(long, value_enum, default_value = "both")]
        which: WhichArg,
    },
    /// Train the perceptron on a training dataset.
    Train {
        /// Defaults to `<out>/train.csv`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score both predictors and write the report files.
    Evaluate(EvalArgs),
    /// `evaluate`, then print the RMSE table.
    Report(EvalArgs),
    /// Generate, train and report in one go.
    Run,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Defaults to `<out>/model.txt`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Defaults to `<out>/train.csv`.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Defaults to `<out>/valid.csv`.
    #[arg(long)]
    valid_data: Option<PathBuf>,
}

fn build_config(g: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    let mut doc = KvDoc::new("command line");
    for item in &g.overrides {
        let (k, v) = item
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
        doc.set(k.trim(), v.trim());
    }
    if let Some(seed) = g.seed {
        doc.set("master_seed", seed.to_string());
    }
    if let Some(n) = g.threads {
        doc.set("threads", n.to_string());
    }
    if g.allow_large {
        doc.set("sim.allow_large", "true");
    }
    if let Some(e) = g.eta_source {
        let v = match e {
            EtaArg::AsPrinted => EtaSource::AsPrinted,
            EtaArg::Derivation => EtaSource::Derivation,
        };
        doc.set("modes.eta_source", v.to_string());
    }
    if let Some(d) = g.drift_mode {
        let v = match d {
            DriftArg::None => DriftMode::None,
            DriftArg::Indexed => DriftMode::Indexed,
        };
        doc.set("modes.drift_mode", v.to_string());
    }
    if let Some(depth) = g.depth {
        doc.set("sim.branch_depth", depth.to_string());
    }
    if let Some(n) = g.scenarios {
        doc.set("sim.n_scenarios", n.to_string());
    }
    cfg.apply(&doc)?;
    if let Some(out) = &g.out {
        cfg.output_dir = Some(out.clone());
    } else if cfg.output_dir.is_none() {
        cfg.output_dir = Some(
            std::env::var_os("BK2F_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        );
    }
    Ok(cfg)
}

fn configure_threads(cfg: &RunConfig) -> Result<()> {
    let Some(n) = cfg.threads else { return Ok(()) };
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    #[cfg(not(feature = "parallel"))]
    eprintln!("note: built without the `parallel` feature; --threads {n} has no effect");
    Ok(())
}

fn print_report(report: &EvalReport) {
    print!("{}", report.rmse_table());
    for cs in &report.cross_sections {
        println!(
            "cross section t={:>2}: {:.1}% of NN relative errors within +-1",
            cs.t,
            100.0 * cs.nn_within_one()
        );
    }
    println!(
        "out-of-sample NN predictions that are not monotone: {:.1}%",
        100.0 * report.nn_non_monotone_oos
    );
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.global)?;
    configure_threads(&cfg)?;
    let exec = if cli.global.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let out = cfg.output_dir()?.to_path_buf();
    let default_path = |which: Which| cfg.dataset_path(which);

    match cli.command {
        Command::Generate { which } => {
            let targets: &[Which] = match which {
                WhichArg::Train => &[Which::Train],
                WhichArg::Valid => &[Which::Valid],
                WhichArg::Both => &[Which::Train, Which::Valid],
            };
            for &w in targets {
                let path = cmd_generate(&cfg, w, exec)
                    .with_context(|| format!("generating the {} dataset", w.as_str()))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Train { dataset } => {
            let dataset = match dataset {
                Some(p) => p,
                None => default_path(Which::Train)?,
            };
            let summary = cmd_train(&cfg, &dataset, exec)
                .with_context(|| format!("training on {}", dataset.display()))?;
            let best = summary.outcome.best();
            println!(
                "best epoch {} of {}: train loss {:.6e}, holdout loss {:.6e}",
                summary.outcome.best_epoch,
                summary.outcome.history.len(),
                best.train_loss,
                best.holdout_loss
            );
            println!("wrote {}", summary.model_path.display());
        }
        Command::Evaluate(args) => {
            let (_, dir) = evaluate(&cfg, &out, args, exec)?;
            println!("wrote report to {}", dir.display());
        }
        Command::Report(args) => {
            let (report, dir) = evaluate(&cfg, &out, args, exec)?;
            print_report(&report);
            println!("wrote report to {}", dir.display());
        }
        Command::Run => {
            let (report, dir) = cmd_run(&cfg, exec)?;
            print_report(&report);
            println!("wrote report to {}", dir.display());
        }
    }
    Ok(())
}

fn evaluate(cfg: &RunConfig, out: &std::path::Path, args: EvalArgs, exec: Exec) -> Result<(EvalReport, PathBuf)> {
    let model = args.model.unwrap_or_else(|| out.join(MODEL_FILE));
    let train = match args.train_data {
        Some(p) => p,
        None => cfg.dataset_path(Which::Train)?,
    };
    let valid = match args.valid_data {
        Some(p) => p,
        None => cfg.dataset_path(Which::Valid)?,
    };
    cmd_evaluate(cfg, &model, &train, &valid, exec)
        .with_context(|| format!("evaluating {}", model.display()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
