use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fedadapt::data::SyntheticConfig;
use fedadapt::Execution;
use fedadapt_cli::{cmd_partition, cmd_report, cmd_synth, cmd_train, ExperimentConfig, PartitionScheme};

#[derive(Parser)]
#[command(name = "fedadapt", version, about = "Federated adversarial adaptation experiments")]
struct Cli {
    /// Worker threads for client training; 1 runs clients serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Dirichlet,
    Pathological,
    Split,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic source and target embedding files.
    Synth {
        /// Experiment config whose [synth] block is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split an embedding file across clients or into train/val/test.
    Partition {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long, default_value_t = 2)]
        clients: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a federated experiment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a training run and write curve CSVs.
    Report {
        /// Training output directory.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `<run>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let mut synth = match &config {
                Some(p) => load_config(p, seed)?.synth.unwrap_or_default(),
                None => SyntheticConfig::default(),
            };
            if let Some(s) = seed {
                synth.seed = s;
            }
            for p in cmd_synth(&synth, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Partition {
            input,
            scheme,
            clients,
            alpha,
            ratios,
            seed,
            out,
        } => {
            let scheme = match scheme {
                Scheme::Dirichlet => PartitionScheme::Dirichlet { alpha, clients },
                Scheme::Pathological => PartitionScheme::Pathological { clients },
                Scheme::Split => {
                    let [a, b, c] = ratios[..] else {
                        bail!("--ratios needs three values");
                    };
                    PartitionScheme::Split { ratios: [a, b, c] }
                }
            };
            for p in cmd_partition(&input, &scheme, seed, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train { config, seed, out } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let exec = if cli.threads == Some(1) {
                Execution::Serial
            } else {
                Execution::Parallel
            };
            let summary = match cli.threads {
                Some(n) if n > 1 => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .context("building thread pool")?
                    .install(|| cmd_train(&cfg, exec))?,
                _ => cmd_train(&cfg, exec)?,
            };
            for (split, (round, m)) in &summary.best {
                println!(
                    "{split}: best round {round} acc {:.4} bacc {:.4} f1 {:.4}",
                    m.acc, m.bacc, m.macro_f1
                );
            }
            println!(
                "communication: {} scalars; outputs in {}",
                summary.total_comm,
                cfg.out_dir.display()
            );
        }
        Command::Report { run, out } => {
            let out = out.unwrap_or_else(|| run.join("report"));
            let summary = cmd_report(&run, &out)?;
            println!(
                "{:<20} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7}",
                "split", "round", "acc", "bacc", "f1", "auc", "ece"
            );
            for (split, b) in &summary.best {
                let m = &b.metrics;
                println!(
                    "{:<20} {:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                    split, b.round, m.acc, m.bacc, m.macro_f1, m.auc, m.ece
                );
            }
            println!("csv files in {}", out.display());
        }
    }
    Ok(())
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
