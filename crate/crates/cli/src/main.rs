use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hournas::proposal::SamplerKind;
use hournas_cli::{configure_threads, run, Artifacts, CliError, Command, Loaded, Overrides};

#[derive(Parser)]
#[command(name = "hournas", version, about = "Two-stage resource-constrained architecture search")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Mask each block of a trained model and record the accuracy drop.
    Probe,
    /// Fit space proposals and dump sampled resource scatters.
    Propose,
    /// Run the two-stage search and write the derived architecture.
    Search,
    /// Train an architecture from scratch and save a checkpoint.
    Retrain,
    /// Evaluate a checkpoint.
    Eval,
}

#[derive(Args)]
struct Opts {
    /// Run configuration (JSON). Required.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `search.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Search all layers in a single stage.
    #[arg(long, global = true)]
    no_vital_priori: bool,
    /// Search sampler: gumbel_max, gumbel_softmax or softmax.
    #[arg(long, global = true, value_name = "NAME")]
    sampler: Option<String>,
    /// Scatter temperatures for `propose`, e.g. 5,1,0.5,0.1.
    #[arg(long, global = true, value_name = "CSV", value_delimiter = ',')]
    tau_list: Option<Vec<f64>>,
    /// Architecture file for `retrain` (default: <out>/architecture.json).
    #[arg(long, global = true, value_name = "PATH")]
    arch: Option<PathBuf>,
    /// Checkpoint to write (`retrain`) or read (`eval`, `probe`); default <out>/model.ckpt.
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

fn command(c: Cmd) -> Command {
    match c {
        Cmd::Probe => Command::Probe,
        Cmd::Propose => Command::Propose,
        Cmd::Search => Command::Search,
        Cmd::Retrain => Command::Retrain,
        Cmd::Eval => Command::Eval,
    }
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let o = cli.opts;
    let config = o.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let sampler = o
        .sampler
        .map(|s| s.parse::<SamplerKind>())
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let overrides = Overrides {
        seed: o.seed,
        out: o.out,
        no_vital_priori: o.no_vital_priori,
        sampler,
        tau_list: o.tau_list,
    };
    let loaded = Loaded::read(&config, &overrides)?;
    let artifacts = Artifacts {
        arch: o.arch,
        checkpoint: o.checkpoint,
    };
    let cmd = command(cli.cmd);
    let doc = run(cmd, &loaded, &artifacts)?;
    println!("{}", summary(cmd, &doc, &loaded));
    Ok(())
}

fn summary(cmd: Command, doc: &serde_json::Value, l: &Loaded) -> String {
    let detail = match cmd {
        Command::Search => format!("resources {}", doc["resources"]),
        Command::Propose => format!("concentration {}", doc["scatter"]["concentration"]),
        Command::Retrain | Command::Eval => format!("accuracy {}", doc["accuracy"]),
        Command::Probe => format!("baseline accuracy {}", doc["baseline_accuracy"]),
    };
    format!("{}: {detail} -> {}", cmd.name(), l.cfg.out.display())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hournas: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
