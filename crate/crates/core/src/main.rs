use std::path::PathBuf;
use std::process::ExitCode;

use bilevel_core::harness::{describe_constants, parse_config, run_experiment};
use bilevel_core::problems::{generate_hyperclean_dataset, write_dataset_csv};
use bilevel_core::BilevelError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bilevel", version, about = "Stochastic bilevel optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell of an experiment config.
    Run { config: PathBuf },
    /// Validate a config without running it.
    Check { config: PathBuf },
    /// Print problem constants and theorem-mode hyperparameters.
    Constants { config: PathBuf },
    /// Generate a dataset file.
    GenData {
        #[command(subcommand)]
        family: DataFamily,
    },
}

#[derive(Subcommand)]
enum DataFamily {
    /// Two Gaussian blobs with a fraction of flipped training labels.
    Hyperclean {
        #[arg(long, default_value_t = 1000)]
        n_train: usize,
        #[arg(long, default_value_t = 1000)]
        n_val: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        p_corrupt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        out: PathBuf,
    },
}

fn config_error(e: BilevelError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match run_experiment(&cfg) {
                Ok(summary) => {
                    for c in &summary.cells {
                        println!("{} {:?} rows={} samples={}", c.run_id, c.status, c.rows, c.total_samples);
                    }
                    ExitCode::from(summary.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Check { config } => match parse_config(&config) {
            Ok(cfg) => {
                println!("ok: {} algorithm block(s), {} seed(s)", cfg.algos.len(), cfg.run.seeds.len());
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
        Command::Constants { config } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            match describe_constants(&cfg) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::GenData { family } => match family {
            DataFamily::Hyperclean {
                n_train,
                n_val,
                n_test,
                dim,
                p_corrupt,
                seed,
                out,
            } => match generate_hyperclean_dataset(n_train, n_val, n_test, dim, p_corrupt, seed)
                .and_then(|d| write_dataset_csv(&d, &out))
            {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            },
        },
    }
}
