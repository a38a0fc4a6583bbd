//! Command-line front end over the experiment pipeline.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use vistab::experiment::config::ExperimentConfig;
use vistab::experiment::pipeline::{
    cmd_bound, cmd_compare, cmd_counterexamples, cmd_expansion, cmd_pacbayes, OutputFormat,
};

#[derive(Parser)]
#[command(
    name = "vistab",
    about = "Stability and certificate analysis for variational training runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a key = value configuration file; defaults are used if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for per-condition artifacts; falls back to the
    /// config's `out_dir`, then to `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report format: text or json.
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Measure per-step expansion factors and write the profile artifacts.
    Expansion(CommonArgs),
    /// Run the full protocol and emit bound reports plus raw traces.
    Bound(CommonArgs),
    /// Run both training objectives on shared seeds and tabulate them.
    Compare(CommonArgs),
    /// Evaluate the two reference constructions and check them.
    Counterexamples {
        /// Report format: text or json.
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Evaluate the certificate calculators at an explicit divergence.
    Pacbayes {
        #[command(flatten)]
        common: CommonArgs,
        /// Divergence of the posterior from the prior.
        #[arg(long)]
        kl: f64,
        /// Training-set size.
        #[arg(long)]
        n: usize,
        /// Optional fixed trade-off parameter; omitted means optimized.
        #[arg(long)]
        lambda: Option<f64>,
    },
}

fn parse_format(name: &str) -> Result<OutputFormat, String> {
    match name {
        "text" => Ok(OutputFormat::Text),
        "json" => Ok(OutputFormat::Json),
        other => Err(format!("unknown format '{other}' (expected text or json)")),
    }
}

fn load_config(common: &CommonArgs) -> vistab::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_out(common: &CommonArgs, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Expansion(common) => {
            parse_format(&common.format)?;
            let cfg = load_config(&common).map_err(|e| e.to_string())?;
            let lines = cmd_expansion(&cfg, &resolve_out(&common, &cfg)).map_err(|e| e.to_string())?;
            for line in lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::Bound(common) => {
            let format = parse_format(&common.format)?;
            let cfg = load_config(&common).map_err(|e| e.to_string())?;
            let (_, lines) =
                cmd_bound(&cfg, &resolve_out(&common, &cfg), format).map_err(|e| e.to_string())?;
            for line in lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::Compare(common) => {
            let format = parse_format(&common.format)?;
            let cfg = load_config(&common).map_err(|e| e.to_string())?;
            let lines =
                cmd_compare(&cfg, &resolve_out(&common, &cfg), format).map_err(|e| e.to_string())?;
            for line in lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::Counterexamples { format } => {
            let format = parse_format(&format)?;
            let out = cmd_counterexamples(format).map_err(|e| e.to_string())?;
            print!("{out}");
            Ok(())
        }
        Command::Pacbayes {
            common,
            kl,
            n,
            lambda,
        } => {
            let format = parse_format(&common.format)?;
            let cfg = load_config(&common).map_err(|e| e.to_string())?;
            let out =
                cmd_pacbayes(&cfg, kl, n, lambda, format).map_err(|e| e.to_string())?;
            print!("{out}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
