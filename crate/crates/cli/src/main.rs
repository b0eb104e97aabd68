//! `fedgls` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedgls::config::{parse_config, Overrides};
use fedgls::dataset::load_dataset;
use fedgls::experiment::{run_experiment, summary_csv, write_metrics};
use fedgls::Error;

#[derive(Parser)]
#[command(name = "fedgls", version, about = "Federated graph learning simulator with graphless clients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more methods and write metrics to the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Method name, comma-separated list, or `all`.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        local_epochs: Option<usize>,
        #[arg(long)]
        graphless_ratio: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, default_value = "fedgls-out")]
        out: PathBuf,
        #[arg(long, conflicts_with = "sbm")]
        dataset: Option<PathBuf>,
        /// Synthetic system, e.g. `blocks=4,nodes=150,p_in=0.1,p_out=0.01`.
        #[arg(long)]
        sbm: Option<String>,
    },
    /// Check that a dataset directory loads cleanly and print its shape.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, method, rounds, local_epochs, graphless_ratio, k, seed, repeats, out, dataset, sbm } => {
            let overrides = Overrides { method, rounds, local_epochs, graphless_ratio, k, seed, repeats, dataset, sbm };
            let cfg = parse_config(Some(&config), &overrides)?;
            let result = run_experiment(&cfg)?;
            write_metrics(&result, &cfg, &out)?;
            print!("{}", summary_csv(&result.summary));
            eprintln!("wrote {}", out.display());
        }
        Command::Validate { dataset } => {
            let ds = load_dataset(&dataset)?;
            let g = &ds.graph;
            println!("nodes\t{}", g.num_nodes());
            println!("edges\t{}", g.edges.len());
            println!("features\t{}", g.feature_dim());
            println!("classes\t{}", g.num_classes());
            match &ds.partition {
                Some(p) => println!("clients\t{}", p.num_communities),
                None => println!("clients\tnone (Louvain at run time)"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // usage errors are configuration errors (exit 1), not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
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
