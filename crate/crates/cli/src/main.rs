mod commands;
mod overrides;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mgtr_core::config::RunConfig;
use mgtr_core::Error;

/// Multi-granular transformer motion prediction on synthetic driving scenes.
///
/// Any `--section.key value` flag overrides the configuration key at that
/// dotted path, e.g. `--optimizer.lr 0.0005`.
#[derive(Parser, Debug)]
#[command(name = "mgtr", version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Base profile: desk or full.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// JSON config merged over the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `path=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train and val scenario files with disjoint seeds.
    GenData {
        #[arg(long)]
        train_out: Option<PathBuf>,
        #[arg(long)]
        val_out: Option<PathBuf>,
    },
    /// Cluster 8 s endpoints into intention goals.
    ClusterIntentions {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, writing one checkpoint per epoch and a metrics log.
    Train,
    /// Evaluate a checkpoint with NMS on a scenario file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Predict every target of a scenario file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for one SVG plot per scenario.
        #[arg(long)]
        svg_dir: Option<PathBuf>,
    },
    /// Print the tokens every target sees.
    Tokenize {
        #[arg(long)]
        scenarios: PathBuf,
        /// Dump token features as JSON lines (otherwise a count summary).
        #[arg(long)]
        dump: bool,
        /// Token encoders from this checkpoint instead of a fresh seeded init.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs, dotted: &[(String, String)]) -> mgtr_core::Result<RunConfig> {
    let base = RunConfig::profile(&args.profile)?;
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            RunConfig::from_json_over(&base, &text)?
        }
        None => base,
    };
    let mut all = Vec::with_capacity(args.set.len() + dotted.len());
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects PATH=VALUE, got {s:?}")))?;
        all.push((k.trim().to_string(), v.trim().to_string()));
    }
    all.extend_from_slice(dotted);
    if !all.is_empty() {
        config = config.with_overrides(&all)?;
    }
    Ok(config)
}

fn run(cli: Cli, dotted: &[(String, String)]) -> mgtr_core::Result<()> {
    let config = load_config(&cli.config, dotted)?;
    match cli.command {
        Command::GenData { train_out, val_out } => commands::gen_data(&config, train_out, val_out),
        Command::ClusterIntentions { train, k, seed, out } => commands::cluster(&config, train, k, seed, out),
        Command::Train => commands::train(&config),
        Command::Eval { checkpoint, data, json } => commands::eval(&config, &checkpoint, data, json),
        Command::Predict {
            checkpoint,
            scenarios,
            out,
            svg_dir,
        } => commands::predict(&checkpoint, &scenarios, &out, svg_dir),
        Command::Tokenize {
            scenarios,
            dump,
            checkpoint,
            out,
        } => commands::tokenize(&config, &scenarios, dump, checkpoint, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MGTR_LOG", "info")).init();
    let (args, dotted) = match overrides::split_args(std::env::args()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli, &dotted) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
