use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use housetour_core::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};
use housetour_core::rng::stream;
use housetour_core::synth::{generate_corpus, to_jsonl, CorpusSpec};
use housetour_core::RoomTypeRegistry;

#[derive(Parser)]
#[command(name = "housetour", version, about = "Build navigation datasets from annotated house-tour videos")]
struct Cli {
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reject unknown annotation fields instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sparse-sample and filter annotation frames.
    Ingest,
    /// Group frames into room nodes and sample trajectories.
    BuildTrajectories,
    /// Caption trajectories and fill instruction templates.
    GenInstructions,
    /// Draw judgment negatives and masked-language samples.
    MakeSamples,
    /// Video-level train/test split and ranking groups.
    Split,
    /// Corpus statistics as JSON and a text table.
    Stats,
    /// Train and evaluate the trajectory judge on the split samples.
    TrainTj,
    /// Run the synthetic layout probe.
    ProbeLayout,
    /// Run every dataset stage in order.
    RunAll,
    /// Write a synthetic annotations file.
    GenCorpus {
        #[arg(long, default_value_t = 12)]
        videos: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let mut c = PipelineConfig::default();
            c.resolve_paths(&std::env::current_dir().unwrap_or_default());
            c
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.paths.out_dir = out.clone();
    }
    if cli.strict {
        config.strict = true;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let config = load_config(cli)?;
    let stage = match &cli.command {
        Command::Ingest => Stage::Ingest,
        Command::BuildTrajectories => Stage::BuildTrajectories,
        Command::GenInstructions => Stage::GenInstructions,
        Command::MakeSamples => Stage::MakeSamples,
        Command::Split => Stage::Split,
        Command::Stats => Stage::Stats,
        Command::TrainTj => Stage::TrainTj,
        Command::ProbeLayout => Stage::ProbeLayout,
        Command::RunAll => {
            let summary = Pipeline::new(config)?.run_all()?;
            let c = &summary.stats.counts;
            println!(
                "{} videos, {} trajectories, {} pairs, {} positive / {} negative samples",
                c.videos, c.trajectories, c.pairs, summary.samples.n_pos, summary.samples.n_neg
            );
            return Ok(());
        }
        Command::GenCorpus { .. } => unreachable!(),
    };
    let pipeline = Pipeline::new(config)?;
    pipeline.run_stage(stage)?;
    println!("{stage}: ok ({})", pipeline.out_dir().display());
    Ok(())
}

fn gen_corpus(cli: &Cli, videos: usize, output: &PathBuf) -> anyhow::Result<()> {
    let spec = CorpusSpec { videos, ..CorpusSpec::default() };
    let seed = cli.seed.unwrap_or(0);
    let frames = generate_corpus(&spec, &RoomTypeRegistry::default(), &mut stream(seed, &["corpus"]));
    std::fs::write(output, to_jsonl(&frames)).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} frames from {videos} videos to {}", frames.len(), output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Command::GenCorpus { videos, output } = &cli.command {
        return match gen_corpus(&cli, *videos, output) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(3)
            }
        };
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
