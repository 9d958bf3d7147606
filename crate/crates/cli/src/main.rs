mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "spectgnn", version, about = "Spectral temporal graph trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory, depending on the command
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Checkpoint file, or a training output directory
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Comma-separated K values, e.g. 1,5,20
    #[arg(long, global = true)]
    k_list: Option<String>,

    /// base|+tgconv|+image|+statt|full
    #[arg(long, global = true, allow_hyphen_values = true)]
    ablate: Option<String>,

    /// broadened|blocked
    #[arg(long, global = true)]
    env_grad: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset directory
    Synth,
    /// Train a model; writes checkpoint.json and loss.csv
    Train,
    /// Best-of-K metrics as JSON
    Eval,
    /// Gaussian tracks and sampled hypotheses as JSON lines
    Predict,
    /// Finite-difference check of every gradient
    Gradcheck,
    /// minADE/minFDE for K = 1..k_max as CSV
    Ksweep,
}

/// Defaults, then the file, then `--set`, then dedicated flags.
fn resolve(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    let flags: [(&str, Option<String>); 7] = [
        ("seed", cli.seed.map(|s| s.to_string())),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("dataset", cli.dataset.as_ref().map(|p| p.display().to_string())),
        ("checkpoint", cli.checkpoint.as_ref().map(|p| p.display().to_string())),
        ("k_list", cli.k_list.clone()),
        ("ablation", cli.ablate.clone()),
        ("env_grad", cli.env_grad.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The error chain, skipping causes whose text the outer message already
/// quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    log::info!("resolved configuration:\n{}", cfg.render().trim_end());
    let result = match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Ksweep => commands::ksweep(&cfg),
        Command::Gradcheck => match commands::gradcheck(&cfg) {
            Ok(true) => Ok(()),
            Ok(false) => Err(anyhow::anyhow!("gradient check failed")),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
