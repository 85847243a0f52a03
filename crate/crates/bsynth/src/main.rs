use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bsynth::backend::BackendKind;
use bsynth::config::{Overrides, RunConfig};
use bsynth::core::downstream::ScenarioId;
use bsynth::pipeline;
use bsynth::report;
use bsynth::{Error, Result};

/// Profile-conditioned synthetic behavior data: generation and audits.
#[derive(Debug, Parser)]
#[command(name = "bsynth", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "bsynth.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// remote_chat, simulator or replay.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    replay_path: Option<PathBuf>,
    #[arg(long, global = true)]
    max_inflight: Option<usize>,
    /// Real event CSV (requires --profiles).
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    #[arg(long, global = true)]
    profiles: Option<PathBuf>,
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a fixture population into the output directory.
    Simulate {
        #[arg(long)]
        users: Option<usize>,
    },
    /// Generate synthetic sequences for every non-holdout user.
    Generate {
        /// Also write the backend responses as a replay file.
        #[arg(long)]
        record_replay: Option<PathBuf>,
    },
    /// Strictly re-validate the real and synthetic datasets.
    Validate,
    /// Fidelity metrics of the first synthetic run.
    Fidelity,
    /// Uniqueness, membership inference and privacy budget audit.
    Privacy,
    /// Next-intent prediction scenarios.
    Evaluate {
        /// Scenario to run; repeat for several. Defaults to all.
        #[arg(long)]
        scenario: Vec<ScenarioId>,
    },
    /// Merge stage reports into one document.
    Report {
        /// Run every stage before merging.
        #[arg(long)]
        full: bool,
    },
}

fn load_config(g: &Global, users: Option<usize>) -> Result<RunConfig> {
    let o = Overrides {
        seed: g.seed,
        output_dir: g.output_dir.clone(),
        backend: g.backend,
        replay_path: g.replay_path.clone(),
        max_inflight: g.max_inflight,
        events: g.events.clone(),
        profiles: g.profiles.clone(),
        vocab: g.vocab.clone(),
        users,
    };
    RunConfig::load(&g.config, &o)
}

fn run(cli: Cli) -> Result<()> {
    let users = match &cli.command {
        Command::Simulate { users } => *users,
        _ => None,
    };
    let cfg = load_config(&cli.global, users)?;
    pipeline::archive_config(&cfg)?;
    match cli.command {
        Command::Simulate { .. } => {
            let d = pipeline::simulate(&cfg)?;
            let paths = pipeline::simulated_paths(&cfg);
            println!(
                "{} users, {} events -> {}",
                d.user_count(),
                d.event_count(),
                paths.events.display()
            );
        }
        Command::Generate { record_replay } => {
            let out = pipeline::generate(&cfg, record_replay.as_deref())?;
            for (run, d) in out.runs.iter().enumerate() {
                println!(
                    "run {run}: {} users, {} events, Pass@1 {:.1}%",
                    d.user_count(),
                    d.event_count(),
                    out.index.pass1[run] * 100.0
                );
            }
            println!("audit log: {}", cfg.audit_log_path().display());
        }
        Command::Validate => {
            for f in pipeline::validate(&cfg)? {
                println!("{}: {} users, {} events, valid", f.path.display(), f.users, f.events);
            }
        }
        Command::Fidelity => {
            let doc = pipeline::fidelity(&cfg)?;
            print!("{}", table_only(&report::render_fidelity(&doc)));
        }
        Command::Privacy => {
            let doc = pipeline::privacy(&cfg)?;
            print!("{}", table_only(&report::render_privacy(&doc)));
        }
        Command::Evaluate { scenario } => {
            let ids = if scenario.is_empty() {
                ScenarioId::ALL.to_vec()
            } else {
                scenario
            };
            for r in pipeline::evaluate(&cfg, &ids)? {
                print!("{}", table_only(&report::render_scenario(&r)));
            }
        }
        Command::Report { full } => {
            let path = pipeline::report(&cfg, full)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// The human-readable part of a report document.
fn table_only(doc: &str) -> &str {
    doc.find("```json").map_or(doc, |i| &doc[..i])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.category().exit_code() as u8
}
