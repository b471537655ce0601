use std::path::PathBuf;
use std::process::ExitCode;

use bat_core::embedding::RegistryMode;
use bat_core::model::AttentionMode;
use bat_experiments::{
    cmd_ablate, cmd_evaluate, cmd_export_attention, cmd_generate_data, cmd_shared_sensors, cmd_sparsity_sweep, cmd_sweep,
    cmd_train, exit_code, ExperimentConfig, Run,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bat", about = "Bi-axial transformer experiments", version)]
struct Cli {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    Biaxial,
    TimeOnly,
    SensorOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Registry {
    Shared,
    Separate,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per replication and report test metrics.
    Train,
    /// Score a checkpoint on one replication split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
    /// Retrain with data components removed or kept alone.
    Ablate,
    /// Retrain at increasing sparsity levels.
    SparsitySweep,
    /// Train jointly on two corpora with shared or separate sensor rows.
    SharedSensors {
        /// Config of the second corpus.
        #[arg(long)]
        second: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        registry: Registry,
    },
    /// Write the largest attention weights for one sample.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample id; picked from the seed when omitted.
        #[arg(long)]
        sample: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Random hyperparameter search.
    Sweep,
    /// Write the configured corpus as NDJSON.
    GenerateData,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    let mode = cli.mode.map(|m| match m {
        Mode::Biaxial => AttentionMode::Biaxial,
        Mode::TimeOnly => AttentionMode::TimeOnly,
        Mode::SensorOnly => AttentionMode::SensorOnly,
    });
    let run = Run::new(base.with_overrides(cli.seed, mode, cli.out))?;
    log::info!("config {} -> {}", run.hash, run.out().display());
    match cli.command {
        Command::Train => {
            let r = cmd_train(&run)?;
            println!("test auprc {:.4} ± {:.4}, auroc {:.4} ± {:.4}", r.test.mean.auprc, r.test.std.auprc, r.test.mean.auroc, r.test.std.auroc);
        }
        Command::Evaluate { checkpoint, replication } => {
            for r in cmd_evaluate(&run, &checkpoint, replication)? {
                println!("{:<10} n={:<5} auprc {:.4} auroc {:.4}", r.split, r.n, r.auprc, r.auroc);
            }
        }
        Command::Ablate => {
            let (_, summary) = cmd_ablate(&run)?;
            for s in summary {
                println!("{:<20} auprc {:.4} ± {:.4}  auroc {:.4} ± {:.4}", s.ablation, s.auprc_mean, s.auprc_std, s.auroc_mean, s.auroc_std);
            }
        }
        Command::SparsitySweep => {
            let (_, summary) = cmd_sparsity_sweep(&run)?;
            for s in summary {
                println!("{:<5} {:<12} auprc {:.4}  auroc {:.4}", s.level, s.mode, s.auprc_mean, s.auroc_mean);
            }
        }
        Command::SharedSensors { second, registry } => {
            let second = ExperimentConfig::from_path(&second)?;
            let modes = match registry {
                Registry::Shared => vec![RegistryMode::Shared],
                Registry::Separate => vec![RegistryMode::Separate],
                Registry::Both => vec![RegistryMode::Shared, RegistryMode::Separate],
            };
            let r = cmd_shared_sensors(&run, &second, &modes)?;
            for s in &r.summary {
                println!("{:<9} {:<16} auprc {:.4} ± {:.4}  auroc {:.4} ± {:.4}", s.registry, s.dataset, s.auprc_mean, s.auprc_std, s.auroc_mean, s.auroc_std);
            }
        }
        Command::ExportAttention { checkpoint, sample, k } => {
            let r = cmd_export_attention(&run, &checkpoint, sample.as_deref(), k)?;
            for (pass, s) in &r.passes {
                println!("{pass:<16} rows {:<3} missing targets {:<3} missing sources {}", s.rows, s.missing_targets, s.missing_sources);
            }
        }
        Command::Sweep => {
            let r = cmd_sweep(&run)?;
            println!("best trial {} mean validation auroc {:.4}", r.best.trial, r.best_mean_val_auroc);
        }
        Command::GenerateData => {
            let path = cmd_generate_data(&run)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

