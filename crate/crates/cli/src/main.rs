//! `nersynth`: runs pipeline stages against a run directory.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 config error, 3 budget exceeded,
//! 4 missing prerequisite stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nersynth_core::pipeline::{BackendKind, EvalInputs, PipelineConfig, PipelineError, Runner, Stage};

#[derive(Parser, Debug)]
#[command(name = "nersynth", version, about = "Synthetic NER data generation pipeline")]
struct Cli {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true, default_value = "nersynth.toml")]
    config: PathBuf,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config backend: live, replay, record or synthetic.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,

    /// Run directory; each stage writes a subdirectory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Complete attribute pools.
    Attrs,
    /// Build named-entity pools.
    Entities,
    /// Generate, validate and deduplicate samples.
    Generate,
    /// Select uncertain annotations and apply corrections.
    Correct,
    /// Write CoNLL, weights and JSONL training files.
    Export,
    /// Score predictions against a gold CoNLL file.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        /// Predictions in CoNLL; without it the prediction model labels the gold sentences.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Sum the cost ledgers of every stage run so far.
    Cost,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(backend) = cli.backend {
        config.backend = backend;
    }
    let mut runner = Runner::new(config, cli.out)?;
    let stage = match cli.command {
        Command::Attrs => Stage::Attrs,
        Command::Entities => Stage::Entities,
        Command::Generate => Stage::Generate,
        Command::Correct => Stage::Correct,
        Command::Export => Stage::Export,
        Command::Eval { gold, pred } => {
            let (_, report) = runner.eval(&EvalInputs { gold, pred })?;
            print!("{report}");
            return Ok(());
        }
        Command::Cost => {
            let (_, report) = runner.cost()?;
            print!("{report}");
            return Ok(());
        }
    };
    let manifest = runner.run(stage)?;
    println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest is JSON"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
