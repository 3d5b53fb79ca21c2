use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hdvggt::harness::{
    cmd_bench, cmd_detect, cmd_generate, cmd_run, cmd_train_upsampler, exit_code, BenchGrid,
    RunConfig, UpsamplerMode, DEFAULT_GRID,
};
use hdvggt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hdvggt",
    version,
    about = "Desk-scale dual-branch geometry transformer"
)]
struct Cli {
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// First scene seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Upsampler {
    Learned,
    Bilinear,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes to disk.
    Generate,
    /// Run the full pipeline and dump depth maps, masks and a report.
    Run {
        #[arg(long, value_enum, default_value = "on")]
        gating: Switch,
        #[arg(long, value_enum, default_value = "bilinear")]
        upsampler: Upsampler,
        /// Trained upsampler directory, `<out>/upsampler` by default.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the guided upsampler on synthetic tasks.
    TrainUpsampler,
    /// Attention scaling table and dual-branch cost comparison.
    Bench {
        #[arg(long, default_value = DEFAULT_GRID)]
        grid: String,
    },
    /// Detection only: saliency, masks and AUC.
    Detect {
        /// Scene directory written by `generate`; repeatable. Scenes are
        /// generated from the config when omitted.
        #[arg(long)]
        scene: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg)?,
        Command::Run {
            gating,
            upsampler,
            checkpoint,
        } => {
            let mode = match upsampler {
                Upsampler::Learned => UpsamplerMode::Learned,
                Upsampler::Bilinear => UpsamplerMode::Bilinear,
            };
            cmd_run(
                &cfg,
                matches!(gating, Switch::On),
                mode,
                checkpoint.as_deref(),
            )?
        }
        Command::TrainUpsampler => cmd_train_upsampler(&cfg)?,
        Command::Bench { grid } => cmd_bench(&cfg, &grid.parse::<BenchGrid>()?)?,
        Command::Detect { scene } => cmd_detect(&cfg, scene)?,
    };
    eprintln!("wrote {}", cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::TrainingDiverged { .. } = e {
                eprintln!("loss became non-finite; lower upsampler.lr");
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
