use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};

use fedssp_core::federation::Method;
use fedssp_core::harness::cache::cache_dir;
use fedssp_core::harness::{cmd_ingest, cmd_report, cmd_spectral_stats, cmd_train, ExperimentConfig};
use fedssp_core::Error;

/// Personalized federated graph classification with spectral GNNs.
#[derive(Debug, Parser)]
#[command(name = "fedssp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a TUDataset directory and copy it into the cache ($FEDSSP_CACHE_DIR).
    Ingest {
        /// Directory holding <NAME>_A.txt, <NAME>_graph_indicator.txt, ...
        dir: PathBuf,
        name: String,
    },
    /// Spectral divergence CSV and histogram JSON for the configured datasets.
    SpectralStats {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the federation and write metrics, checkpoints and a report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = PossibleValuesParser::new(["fedssp", "fedavg", "local"]))]
        method: String,
        /// Single seed; overrides the config's seed list.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seeds; overrides the config's seed list.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
        /// Suppress per-round progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Aggregate a metrics directory into a CSV table (mean ± population std).
    Report {
        metrics_dir: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest { dir, name } => {
            let root = cache_dir();
            let summary = cmd_ingest(&dir, &name, &root)?;
            let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Data(e.to_string()))?;
            println!("{json}");
            eprintln!("stored {name} in {}", root.join(&name).display());
        }
        Command::SpectralStats { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (csv, json) = cmd_spectral_stats(&cfg, out.as_deref())?;
            println!("{}", csv.display());
            println!("{}", json.display());
        }
        Command::Train {
            config,
            method,
            seed,
            seeds,
            quiet,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let method: Method = method.parse()?;
            let seeds = seed.map(|s| vec![s]).unwrap_or(seeds);
            let out = cmd_train(&cfg, method, &seeds, |seed, m| {
                if quiet {
                    return;
                }
                let n = m.rows.len().max(1) as f64;
                let mean = |f: fn(&fedssp_core::federation::MetricsRow) -> f64| m.rows.iter().map(f).sum::<f64>() / n;
                eprintln!(
                    "seed {seed} round {:>4}  loss {:.4}  val {:.3}  test {:.3}  ({:.2}s)",
                    m.round,
                    mean(|r| r.train_loss),
                    mean(|r| r.val_acc),
                    mean(|r| r.test_acc),
                    m.wall_time_secs
                );
            })?;
            print!("{}", out.report.to_csv());
            eprintln!("report written to {}", out.report_path.display());
        }
        Command::Report { metrics_dir, out } => {
            let csv = cmd_report(&metrics_dir)?.to_csv();
            print!("{csv}");
            if let Some(path) = out {
                std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
