//! `fedmem` — deterministic federated-learning simulation from the command
//! line. Subcommands cover the full workflow: partitioning data into client
//! shards, running experiments, sweeping hyperparameters, aggregating
//! metrics into reports, and exporting personalized models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedmem::config::{parse_config, ExperimentConfig};
use fedmem::error::Result;
use fedmem::experiment::{build_partition, run_experiment_to_csv, run_personalize, sweep};
use fedmem::metrics::write_csv;
use fedmem::report::report;

#[derive(Parser)]
#[command(
    name = "fedmem",
    version,
    about = "Deterministic federated-learning simulator with data-free personalization"
)]
struct Cli {
    /// Worker threads for parallel sections (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the configured dataset into client shards and write them as JSON.
    Partition {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output path for the shard JSON.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every configured strategy over all repeats and write a metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output path for the metrics CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat the experiment across one hyperparameter axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis to vary: noise_dim, n_s, alpha, beta, or embedding_table.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate metrics CSVs into summary tables and SVG accuracy curves.
    Report {
        /// Metrics CSV files produced by `run` or `sweep`.
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        /// Output directory for summary.csv, summary.md, and curves.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the personalization pipeline and save every produced model.
    Personalize {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the binary parameter files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(path)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Partition { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let (train, _test, shards) = build_partition(&cfg, cfg.master_seed)?;
            let per_client: Vec<serde_json::Value> = (0..shards.num_clients())
                .map(|k| {
                    serde_json::json!({
                        "client": k,
                        "size": shards.shard(k).len(),
                        "held_classes": shards.held_classes(k, &train),
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "num_clients": shards.num_clients(),
                "seed": cfg.master_seed,
                "clients": per_client,
                "shards": shards.to_map(),
            });
            std::fs::write(&out, serde_json::to_string_pretty(&doc)? + "\n")?;
            println!("wrote {} shards to {}", shards.num_clients(), out.display());
        }
        Command::Run { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let path = run_experiment_to_csv(&cfg, None, &out)?;
            println!("wrote metrics to {}", path.display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let records = sweep(&cfg, axis.parse()?, &values)?;
            write_csv(&out, &records)?;
            println!(
                "wrote {} records for {} values to {}",
                records.len(),
                values.len(),
                out.display()
            );
        }
        Command::Report { csvs, out } => {
            let paths = report(&csvs, &out)?;
            println!("wrote {}", paths.summary_csv.display());
            println!("wrote {}", paths.summary_md.display());
            for curve in paths.curves {
                println!("wrote {}", curve.display());
            }
        }
        Command::Personalize { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            for path in run_personalize(&cfg, &out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successful exits; anything else
            // is invalid usage and shares the validation exit code.
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} threads: {err}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}
