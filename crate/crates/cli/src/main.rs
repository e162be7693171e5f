use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cqr_core::pipeline::{self, PipelineConfig, Run, Stage};

/// Conversational query reformulation aligned to sparse and dense retrievers.
///
/// Exit codes: 0 success, 1 internal error, 2 usage or configuration error.
#[derive(Parser)]
#[command(name = "cqr", version)]
struct Cli {
    /// Pipeline config (json). Relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "CQR_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides `paths.workdir` from the config.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate passages and conversations and copy them into the workdir.
    Ingest,
    /// Build the BM25 and dense indices.
    Index {
        /// Overwrite existing index files.
        #[arg(long)]
        force: bool,
    },
    /// Render annotation prompts and collect labels.
    Annotate {
        /// labels.jsonl used as a deterministic offline annotator.
        #[arg(long)]
        mock_fixtures: Option<PathBuf>,
    },
    /// Cross-entropy training on the labels.
    Stage1,
    /// Decode candidate sets for the training problems.
    GenCandidates,
    /// Score candidates by retrieval fusion and order them.
    Rank,
    /// Alignment training on the ranked candidates.
    Stage2,
    /// Rewrite the test queries.
    Reformulate {
        /// Checkpoint to decode with (default: the Stage-2 checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Retrieval metrics of the reformulations, overall and per topic split.
    Evaluate {
        /// Reformulations file (default: the workdir's).
        #[arg(long)]
        reformulations: Option<PathBuf>,
    },
    /// Append answers and keywords to reformulations.
    ExpandConcat {
        #[arg(long)]
        reformulations: PathBuf,
        /// jsonl of `{"problem_id", "answer"}`.
        #[arg(long)]
        answers: Option<PathBuf>,
        /// jsonl of `{"problem_id", "keywords"}`.
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean DICE and cosine to the gold passage per Stage-2 epoch.
    TraceAlignment,
    /// Run several stages in order.
    Pipeline {
        /// Comma-separated subset, e.g. `rank,stage2` (default: all).
        #[arg(long)]
        stages: Option<String>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        mock_fixtures: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| cqr_core::Error::Config("--config is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::ExpandConcat {
        reformulations,
        answers,
        keywords,
        out,
    } = &cli.command
    {
        let n = pipeline::cmd_expand_concat(reformulations, answers.as_deref(), keywords.as_deref(), out)?.len();
        println!("expanded {n} queries into {}", out.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let force = matches!(cli.command, Command::Index { force: true } | Command::Pipeline { force: true, .. });
    let run = Run::open(cfg, force)?;
    match &cli.command {
        Command::Ingest => print_json(&pipeline::cmd_ingest(&run)?)?,
        Command::Index { .. } => print_json(&pipeline::cmd_index(&run)?)?,
        Command::Annotate { mock_fixtures } => print_json(&pipeline::cmd_annotate(&run, mock_fixtures.as_deref())?)?,
        Command::Stage1 => summarize_training("stage1", &pipeline::cmd_stage1(&run)?),
        Command::GenCandidates => {
            let sets = pipeline::cmd_gen_candidates(&run)?;
            println!("wrote {} candidate sets", sets.len());
        }
        Command::Rank => {
            let sets = pipeline::cmd_rank(&run)?;
            println!("ranked {} candidate sets", sets.len());
        }
        Command::Stage2 => summarize_training("stage2", &pipeline::cmd_stage2(&run)?),
        Command::Reformulate { checkpoint } => {
            let refs = pipeline::cmd_reformulate(&run, checkpoint.as_deref())?;
            println!("wrote {} reformulations", refs.len());
        }
        Command::Evaluate { reformulations } => print_json(&pipeline::cmd_evaluate(&run, reformulations.as_deref())?.report)?,
        Command::TraceAlignment => {
            for p in pipeline::cmd_trace_alignment(&run)? {
                println!("epoch {} dice {:.4} cosine {:.4}", p.epoch, p.mean_dice, p.mean_cosine);
            }
        }
        Command::Pipeline {
            stages, mock_fixtures, ..
        } => {
            let stages = match stages {
                Some(s) => Stage::parse_list(s)?,
                None => Stage::ALL.to_vec(),
            };
            pipeline::cmd_pipeline(&run, &stages, mock_fixtures.as_deref())?;
            println!("done: {}", stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(","));
        }
        Command::ExpandConcat { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn summarize_training(stage: &str, report: &cqr_core::training::TrainReport) {
    match report.steps.last() {
        Some(s) => println!("{stage}: {} steps, final L_total {:.4}", report.steps.len(), s.l_total),
        None => println!("{stage}: no steps"),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<cqr_core::Error>()) {
        Some(e) if e.is_user_error() => 2,
        Some(_) => 1,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
