use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aptmle::config::{parse_analysis_config, parse_sap_config};
use aptmle::report::{self, write_report_files};
use aptmle::sim::parse_dgp_config;

#[derive(Parser)]
#[command(
    name = "aptmle",
    version,
    about = "Targeted maximum likelihood estimation with adaptively pre-specified covariate \
             adjustment for randomized trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pre-specified adaptive analysis on a trial CSV.
    Analyze {
        /// SAP config file (TOML) including the [data] column mapping.
        #[arg(long)]
        config: PathBuf,
        /// Trial dataset (CSV with a header row).
        #[arg(long)]
        data: PathBuf,
        /// Output stem; writes <out>.json and <out>.txt.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed (the override is logged).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo performance of the analysis under a parametric DGP.
    Simulate {
        /// DGP spec file (TOML).
        #[arg(long)]
        dgp: PathBuf,
        /// SAP config file (TOML); the [data] table is not needed.
        #[arg(long)]
        config: PathBuf,
        /// Number of simulated trials.
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// Output stem; writes <out>.json and <out>.txt.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed (the override is logged).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Treatment-blind permutation check of Type-I error control.
    Permtest {
        /// SAP config file (TOML) including the [data] column mapping.
        #[arg(long)]
        config: PathBuf,
        /// Trial dataset (CSV with a header row).
        #[arg(long)]
        data: PathBuf,
        /// Number of label permutations (all distinct assignments are
        /// enumerated when fewer exist).
        #[arg(long, default_value_t = 500)]
        reps: usize,
        /// Output stem; writes <out>.json and <out>.txt.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed (the override is logged).
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run() -> aptmle::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze { config, data, out, seed } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = parse_analysis_config(&text)?;
            let report = report::analyze(&cfg, &data, seed)?;
            let (json_path, _) =
                write_report_files(&out, &report.to_json(), &report.render_text())?;
            println!("{}", report.render_text());
            println!("report written to {}", json_path.display());
        }
        Command::Simulate { dgp, config, reps, out, seed } => {
            let dgp_spec = parse_dgp_config(&std::fs::read_to_string(&dgp)?)?;
            let cfg = parse_sap_config(&std::fs::read_to_string(&config)?)?;
            let report = report::simulate(&dgp_spec, &cfg, reps, seed)?;
            let (json_path, _) =
                write_report_files(&out, &report.to_json(), &report.render_text())?;
            println!("{}", report.render_text());
            println!("report written to {}", json_path.display());
        }
        Command::Permtest { config, data, reps, out, seed } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = parse_analysis_config(&text)?;
            let report = report::permtest(&cfg, &data, reps, seed)?;
            let (json_path, _) =
                write_report_files(&out, &report.to_json(), &report.render_text())?;
            println!("{}", report.render_text());
            println!("report written to {}", json_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
