//! `writerid`: runs the writer-identification pipeline stage by stage.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use writerid::pipeline::{Pipeline, PipelineConfig, Stage};
use writerid::synth::{corpus, write_dataset, PageLayout};

#[derive(Parser)]
#[command(name = "writerid", version, about = "Writer identification from handwriting images")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `gmm.components=32`. Repeatable.
    #[arg(long = "stage-override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Root seed, replacing the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Otsu-binarize every document.
    Binarize,
    /// Sample 32x32 patches along the ink contours.
    Patches,
    /// Train the CNN on the training manifest.
    TrainCnn,
    /// Extract hidden-layer activations for every patch.
    Features,
    /// Fit (or reuse) the whitening transform and apply it.
    Whiten,
    /// Fit (or reuse) the GMM or k-means dictionary.
    TrainGmm,
    /// Encode every test document into a global descriptor.
    Encode,
    /// Leave-one-out retrieval: mAP and hard TOP-k.
    Evaluate,
    /// Run all stages in order.
    Pipeline,
    /// Generate a synthetic handwriting dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the images and `manifest.txt`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    writers: usize,
    #[arg(long, default_value_t = 4)]
    docs: usize,
    /// Index of the first writer; distinct ranges give disjoint writer sets.
    #[arg(long, default_value_t = 0)]
    first_writer: usize,
    #[arg(long, default_value_t = 360)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
}

fn stage_of(command: &Command) -> Option<Stage> {
    Some(match command {
        Command::Binarize => Stage::Binarize,
        Command::Patches => Stage::Patches,
        Command::TrainCnn => Stage::TrainCnn,
        Command::Features => Stage::Features,
        Command::Whiten => Stage::Whiten,
        Command::TrainGmm => Stage::TrainGmm,
        Command::Encode => Stage::Encode,
        Command::Evaluate => Stage::Evaluate,
        Command::Pipeline | Command::Synth(_) => return None,
    })
}

fn load_pipeline(common: &Common) -> Result<Pipeline> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = PipelineConfig::load(common.config.as_deref(), &overrides).context("loading configuration")?;
    Ok(Pipeline::new(config)?)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(args) => {
            let layout = PageLayout {
                width: args.width,
                height: args.height,
                ..PageLayout::default()
            };
            let docs = corpus(args.writers, args.docs, args.first_writer, &layout, cli.common.seed.unwrap_or(0))?;
            let manifest = write_dataset(&args.out, &docs)?;
            println!("{}", manifest.display());
        }
        Command::Pipeline => {
            let pipeline = load_pipeline(&cli.common)?;
            pipeline.run_all()?;
            print!("{}", std::fs::read_to_string(pipeline.report_path())?);
        }
        command => {
            let stage = stage_of(command).expect("every other command is a stage");
            let pipeline = load_pipeline(&cli.common)?;
            pipeline.run(stage)?;
            if stage == Stage::Evaluate {
                print!("{}", std::fs::read_to_string(pipeline.report_path())?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
