use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use textsense_core::text::{Pooling, PromptStrategy};
use textsense_cli::commands::{cmd_ablate, cmd_embed, cmd_gen, cmd_report, cmd_run};
use textsense_cli::config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "textsense", version, about = "Wireless sensing with label-text fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into --out
    Gen(Common),
    /// Write a pseudo-embedding cache for the configured labels
    Embed(Common),
    /// Train W and W+T models for every seed and write a report
    Run(Common),
    /// Run the prompt-strategy by embedding-source grid
    Ablate(Common),
    /// Print a report CSV as a table
    Report {
        csv: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training seed, repeatable; replaces the configured list
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TLE, TCE or TDE
    #[arg(long)]
    strategy: Option<PromptStrategy>,
    /// Text weight w_t; the signal weight becomes 1 - w_t
    #[arg(long)]
    text_weight: Option<f64>,
    /// mean or cross_attention
    #[arg(long)]
    pooling: Option<Pooling>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            strategy: self.strategy,
            text_weight: self.text_weight,
            pooling: self.pooling,
        })?;
        cfg.resolve()
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => {
            let dir = cmd_gen(&c.config()?)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Embed(c) => {
            let path = cmd_embed(&c.config()?)?;
            println!("embedding cache written to {}", path.display());
        }
        Command::Run(c) => {
            let cfg = c.config()?;
            let out = cmd_run(&cfg)?;
            print!("{}", out.report.render());
            println!("outputs in {}", cfg.output_dir.display());
        }
        Command::Ablate(c) => {
            let cfg = c.config()?;
            let out = cmd_ablate(&cfg)?;
            print!("{}", out.table.render());
            for cell in out.cells.iter().filter(|c| c.outcome.is_err()) {
                eprintln!("cell {}/{} failed", cell.source, cell.strategy);
            }
        }
        Command::Report { csv } => print!("{}", cmd_report(&csv)?),
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    use textsense_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) => "invalid_argument",
                E::AngleDomain { .. } | E::NegativeRadicand { .. } => "domain",
                E::Shape(_) | E::DimensionMismatch { .. } | E::RaggedEntries { .. } => "shape",
                E::NonFinite { .. } | E::NonFiniteLoss { .. } => "non_finite",
                E::Io { .. } => "io",
                E::Json { .. } => "json",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    if err.to_string().starts_with("invalid argument") {
        "invalid_argument"
    } else {
        "error"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": error_kind(&e), "message": format!("{e:#}")});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
