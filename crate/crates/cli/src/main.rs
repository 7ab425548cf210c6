use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stopgate_cli::config::RunConfig;
use stopgate_cli::{commands, repro, CliError};

#[derive(Parser)]
#[command(name = "stopgate", version, about = "Learn and evaluate when to stop gathering information")]
struct Cli {
    /// JSON config file (flat keys; flags override it).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    jump_threshold: Option<f64>,
    #[arg(long, global = true)]
    low_threshold: Option<f64>,
    #[arg(long, global = true)]
    continue_ratio: Option<f64>,
    #[arg(long, global = true)]
    n_label_samples: Option<u32>,
    #[arg(long = "horizon", global = true)]
    horizon_t: Option<usize>,
    #[arg(long, global = true)]
    marker_file: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled synthetic trajectories.
    Synth {
        #[arg(long)]
        n: usize,
        /// Index of the first trajectory; use disjoint ranges for train and eval.
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label trajectories with the configured success provider.
    Label {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a counterfactual termination dataset.
    Build {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write chat-formatted training records here.
        #[arg(long)]
        chat_out: Option<PathBuf>,
    },
    /// Fit a logistic termination policy on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "logistic")]
        name: String,
    },
    /// Roll a policy over labeled trajectories and report the metrics.
    Eval {
        /// fixed:<k>, threshold:<theta>, oracle, logistic:<checkpoint>, remote:<url>
        #[arg(long)]
        policy: String,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint whose probability is the threshold policy's confidence.
        #[arg(long)]
        confidence: Option<PathBuf>,
    },
    /// Termination probability at every prefix of one trajectory, as CSV.
    Curve {
        #[arg(long)]
        policy: String,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        problem_id: Option<String>,
        #[arg(long)]
        confidence: Option<PathBuf>,
    },
    /// Attach binary rewards to manifest examples for RL trainers.
    ExportRl {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a reasoning trace into episodes.
    Segment {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probe on manifest features (terminate vs continue).
    Probe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
    },
    /// Full synthetic experiment with ordering checks.
    Repro {
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    macro_rules! set {
        ($($f:ident),*) => {$(
            if let Some(v) = cli.$f.clone() {
                cfg.$f = v;
            }
        )*};
    }
    set!(seed, gamma, jump_threshold, low_threshold, continue_ratio, n_label_samples, horizon_t);
    if let Some(m) = &cli.marker_file {
        cfg.marker_file = Some(m.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Synth { n, start, out } => commands::cmd_synth(&cfg, *n, *start, out),
        Command::Label { trajectories, out } => commands::cmd_label(&cfg, trajectories, out),
        Command::Build {
            trajectories,
            out,
            chat_out,
        } => commands::cmd_build(&cfg, trajectories, out, chat_out.as_deref()),
        Command::Train { manifest, out, name } => commands::cmd_train(&cfg, manifest, out, name),
        Command::Eval {
            policy,
            trajectories,
            out,
            confidence,
        } => commands::cmd_eval(&cfg, policy, trajectories, out, confidence.as_deref()),
        Command::Curve {
            policy,
            trajectories,
            out,
            problem_id,
            confidence,
        } => commands::cmd_curve(
            &cfg,
            policy,
            trajectories,
            out,
            problem_id.as_deref(),
            confidence.as_deref(),
        ),
        Command::ExportRl {
            manifest,
            trajectories,
            out,
        } => commands::cmd_export_rl(&cfg, manifest, trajectories, out),
        Command::Segment { trace, out } => commands::cmd_segment(&cfg, trace, out),
        Command::Probe {
            manifest,
            out,
            train_fraction,
        } => commands::cmd_probe(&cfg, manifest, out, *train_fraction),
        Command::Repro { out } => repro::cmd_repro(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
