//! Command-line front door for the hotspot detection pipeline. Loads a
//! TOML run configuration, applies flag overrides (flags win), and
//! dispatches to the subcommand handlers.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hotspots_cli::commands::{
    cmd_assign, cmd_detect, cmd_encode, cmd_eval, cmd_losses, cmd_oracle_check, cmd_synth,
    cmd_voxelize, Ctx,
};
use hotspots_cli::config::RunConfig;
use hotspots_core::assignment::RelationEncoding;

#[derive(Parser)]
#[command(
    name = "hotspots",
    version,
    about = "Hotspot assignment, losses, detection post-processing and evaluation \
             for anchor-free LiDAR 3D detection"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration; flags below override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base RNG seed for the whole run.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// Worker threads for scene-level parallelism.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,
    /// Directory receiving outputs and the resolved config echo.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    output_dir: PathBuf,
    /// Comma-separated class names in class-id order.
    #[arg(long, global = true, value_delimiter = ',', value_name = "NAMES")]
    class_names: Option<Vec<String>>,
    /// Spatial-relation encoding for the auxiliary branch.
    #[arg(long, global = true, value_enum, value_name = "KIND")]
    encoding: Option<EncodingArg>,
    /// Hotspot budget C; pass "inf" to lift the per-object cap.
    #[arg(long = "C", global = true, value_name = "BUDGET")]
    c: Option<f64>,
    /// BEV downsampling factor applied to the voxel grid.
    #[arg(long, global = true, value_name = "FACTOR")]
    downsample: Option<usize>,
    /// Report errors as one machine-readable JSON record on stderr.
    #[arg(long, global = true)]
    error_json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EncodingArg {
    None,
    Lr,
    Fb,
    Quadrant,
    #[value(name = "8dir")]
    EightDir,
    Deviation,
}

impl From<EncodingArg> for RelationEncoding {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::None => RelationEncoding::None,
            EncodingArg::Lr => RelationEncoding::LeftRight,
            EncodingArg::Fb => RelationEncoding::FrontBack,
            EncodingArg::Quadrant => RelationEncoding::Quadrant,
            EncodingArg::EightDir => RelationEncoding::EightDir,
            EncodingArg::Deviation => RelationEncoding::Deviation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic scenes with ground-truth boxes.
    Synth,
    /// Voxelize scenes and report per-scene grid statistics.
    Voxelize {
        /// Scene directory produced by `synth`.
        #[arg(long, value_name = "DIR")]
        scenes: PathBuf,
    },
    /// Build hotspot assignments and surface per-object counts and caps.
    Assign {
        #[arg(long, value_name = "DIR")]
        scenes: PathBuf,
    },
    /// Encode ground truth into dense head-output files.
    Encode {
        #[arg(long, value_name = "DIR")]
        scenes: PathBuf,
    },
    /// Compute losses and gradient summaries for head outputs.
    Losses {
        #[arg(long, value_name = "DIR")]
        scenes: PathBuf,
        /// Head directory produced by `encode` (or an external trainer).
        #[arg(long, value_name = "DIR")]
        heads: PathBuf,
    },
    /// Decode head outputs into detections (threshold, top-k, rotated NMS).
    Detect {
        #[arg(long, value_name = "DIR")]
        heads: PathBuf,
    },
    /// Match detections against ground truth and report AP40 and recall.
    Eval {
        #[arg(long, value_name = "DIR")]
        scenes: PathBuf,
        /// detections.jsonl produced by `detect`.
        #[arg(long, value_name = "FILE")]
        detections: PathBuf,
    },
    /// Run every reference-oracle suite and report pass/fail.
    OracleCheck {
        /// Run the slow full-scale suites instead of the quick ones.
        #[arg(long)]
        full: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    if cli.global.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(names) = cli.global.class_names {
        cfg.class_names = names;
    }
    if let Some(encoding) = cli.global.encoding {
        cfg.encoding = encoding.into();
    }
    if let Some(c) = cli.global.c {
        cfg.c = c;
    }
    if let Some(downsample) = cli.global.downsample {
        cfg.grid.downsample = downsample;
    }
    cfg.validate()?;
    let ctx = Ctx {
        cfg,
        output_dir: cli.global.output_dir,
        jobs: cli.global.jobs,
    };
    match cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Voxelize { scenes } => cmd_voxelize(&ctx, &scenes),
        Command::Assign { scenes } => cmd_assign(&ctx, &scenes),
        Command::Encode { scenes } => cmd_encode(&ctx, &scenes),
        Command::Losses { scenes, heads } => cmd_losses(&ctx, &scenes, &heads),
        Command::Detect { heads } => cmd_detect(&ctx, &heads),
        Command::Eval { scenes, detections } => cmd_eval(&ctx, &scenes, &detections),
        Command::OracleCheck { full } => cmd_oracle_check(&ctx, full),
    }
}

fn main() {
    let cli = Cli::parse();
    let error_json = cli.global.error_json;
    if let Err(e) = run(cli) {
        if error_json {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        } else {
            eprintln!("error: {e:#}");
        }
        std::process::exit(1);
    }
}
