use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Tree-Chain scenario runner.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the scenario a config file describes.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a network or retrieval config and write its ledger forest.
    Export {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Load a forest file, re-export it and benchmark retrieval on it.
    Import {
        forest: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 2_000)]
        queries: usize,
    },
    /// Re-run the chain integrity checks of a forest file.
    Verify {
        forest: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::Run { config, out } => treechain_bench::run(config, out),
        Verb::Export { config, out } => treechain_bench::export(config, out),
        Verb::Import { forest, out, queries } => treechain_bench::import(forest, out, *queries),
        Verb::Verify { forest, out } => treechain_bench::verify(forest, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("treechain: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
