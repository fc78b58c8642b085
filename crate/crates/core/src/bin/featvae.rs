use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use featvae::pipeline::{Pipeline, PipelineConfig, StageOutcome};
use featvae::vae::VaePreset;
use featvae::{Error, Result};

#[derive(Parser)]
#[command(
    name = "featvae",
    version,
    about = "Disentangled representations from aggregated CNN features"
)]
struct Cli {
    /// Global seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration document; defaults to `<out-dir>/config.json` when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    /// VAE configuration preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Rerun stages even if their outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Main,
    AppendixB,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic datasets.
    Generate,
    /// Finetune the extractor on the finetuning styles.
    Finetune,
    /// Extract aggregated feature vectors of the evaluation style.
    Extract,
    /// Train the β-VAE on the extracted features.
    Train,
    /// Score the VAE representation and a noise baseline.
    Evaluate,
    /// Print metrics, training summaries and provenance.
    Report,
    /// Run generate, finetune, extract, train and evaluate in order.
    Run,
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let archived = cli.out_dir.join("config.json");
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None if archived.exists() => PipelineConfig::load(&archived)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.preset {
        config.vae_preset = match p {
            Preset::Main => VaePreset::Main,
            Preset::AppendixB => VaePreset::AppendixB,
            Preset::Desk => VaePreset::Desk,
        };
        config.vae = None;
    }
    Ok(config)
}

fn outcome(stage: &str, o: StageOutcome) {
    match o {
        StageOutcome::Ran => println!("{stage}: done"),
        StageOutcome::Skipped => println!("{stage}: up to date"),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = resolve(cli)?;
    let pipeline = Pipeline::new(config, &cli.out_dir)?.force(cli.force);
    match cli.command {
        Command::Report => {
            print!("{}", pipeline.report()?);
            return Ok(());
        }
        Command::Run => {
            for (stage, o) in pipeline.run_all()? {
                outcome(stage, o);
            }
            return Ok(());
        }
        _ => {}
    }
    pipeline.archive_config()?;
    let (stage, o) = match cli.command {
        Command::Generate => ("generate", pipeline.generate()?),
        Command::Finetune => ("finetune", pipeline.finetune()?),
        Command::Extract => ("extract", pipeline.extract()?),
        Command::Train => ("train", pipeline.train()?),
        Command::Evaluate => ("evaluate", pipeline.evaluate()?),
        Command::Report | Command::Run => unreachable!(),
    };
    outcome(stage, o);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Divergence { .. } = e {
                eprintln!("the last finite checkpoint was saved next to the stage outputs");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
