use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use latent_walk::pipeline::{Arm, Pipeline, PipelineConfig, Stage};
use latent_walk::Error;
use serde_json::json;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    SynthData,
    TrainGan,
    Project,
    TrainClassifiers,
    Ksame,
    Plan,
    GenDataset,
    Eval,
    /// Every stage in order.
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArmArg {
    Real,
    Linear,
    Plan,
    Ksame,
    KsamePlan,
}

impl From<ArmArg> for Arm {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Real => Arm::Real,
            ArmArg::Linear => Arm::Linear,
            ArmArg::Plan => Arm::Plan,
            ArmArg::Ksame => Arm::Ksame,
            ArmArg::KsamePlan => Arm::KsamePlan,
        }
    }
}

/// Runs one stage of the latent trajectory pipeline.
#[derive(Debug, Parser)]
#[command(name = "plan-cli", version)]
struct Args {
    #[arg(value_enum)]
    stage: StageArg,

    /// TOML config file; missing keys take their defaults.
    #[arg(long)]
    config: PathBuf,

    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory [default: config `out_dir`, else `out`].
    #[arg(long, env = "PLAN_OUT_DIR")]
    out: Option<PathBuf>,

    /// Worker threads for the plan and eval stages.
    #[arg(long, env = "PLAN_WORKERS")]
    workers: Option<usize>,

    /// Restrict per-arm stages (plan, gen-dataset, eval) to one arm.
    #[arg(long, value_enum)]
    arm: Option<ArmArg>,
}

fn stage_of(s: StageArg) -> Option<Stage> {
    Some(match s {
        StageArg::SynthData => Stage::SynthData,
        StageArg::TrainGan => Stage::TrainGan,
        StageArg::Project => Stage::Project,
        StageArg::TrainClassifiers => Stage::TrainClassifiers,
        StageArg::Ksame => Stage::Ksame,
        StageArg::Plan => Stage::Plan,
        StageArg::GenDataset => Stage::GenDataset,
        StageArg::Eval => Stage::Eval,
        StageArg::All => return None,
    })
}

fn run(args: Args) -> Result<(), Error> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let workers = args.workers.unwrap_or(cfg.workers);
    let pipeline = Pipeline::new(cfg, out, workers)?;
    let arms: Option<Vec<Arm>> = args.arm.map(|a| vec![a.into()]);
    let outcomes = match stage_of(args.stage) {
        Some(stage) => vec![pipeline.run_stage(stage, arms.as_deref())?],
        None => pipeline.run_all(arms.as_deref())?,
    };
    for o in outcomes {
        println!("{}", serde_json::to_string(&o).expect("outcome serializes"));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = json!({ "error": "usage", "message": e.to_string().trim_end() });
            eprintln!("{}", msg);
            return ExitCode::from(2);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{}", msg);
            ExitCode::from(1)
        }
    }
}
