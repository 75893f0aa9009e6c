//! `s2h` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use s2h_core::commands::{
    cmd_complete, cmd_eval, cmd_gen_dataset, cmd_pretrain_gsp, cmd_sample, cmd_train, ModelBundle, RunConfig, SampleOptions,
};
use s2h_core::geometry::{Plane, Point3};
use s2h_core::hand::build_capsule_hand;
use s2h_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "s2h", version, about = "Grasp generation for single-view scene point clouds")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reverse diffusion steps for sampling.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Stochasticity of the reverse sampler (0 = deterministic).
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Number of grasps to sample.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the scene dataset described by the config into `--out`.
    GenDataset,
    /// Train the scene encoder and completion head.
    PretrainGsp,
    /// Joint training of the perception heads and the grasp denoiser.
    Train,
    /// Sample grasps for a scene cloud.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
    },
    /// Complete the object in a scene cloud and merge it into the scene.
    Complete {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
    },
    /// Evaluate grasp files against an object mesh.
    Eval {
        /// Grasp JSON files.
        #[arg(long, required = true, num_args = 1..)]
        grasps: Vec<PathBuf>,
        /// Object mesh (OBJ) in the grasp frame.
        #[arg(long)]
        object: PathBuf,
        /// Table plane as `nx,ny,nz,d`; `z = 0` when absent.
        #[arg(long)]
        plane: Option<String>,
        /// Model whose hand is used; the default hand when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("S2H_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = cli.steps {
        cfg.sample.steps = steps;
    }
    if let Some(eta) = cli.eta {
        cfg.sample.eta = eta;
    }
    if let Some(n) = cli.n {
        cfg.sample.n = n;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::GenDataset => {
            let out = out.unwrap_or(&cfg.dataset).to_path_buf();
            let summary = cmd_gen_dataset(&cfg, &out)?;
            log::info!(
                "{} scenes, {} clouds, {} dropped scenes, {} skipped objects",
                summary.scenes,
                summary.clouds,
                summary.dropped_scenes,
                summary.skipped_objects.len()
            );
        }
        Command::PretrainGsp => {
            let summary = cmd_pretrain_gsp(&cfg, require_out(out)?)?;
            if let Some(last) = summary.epochs.last() {
                log::info!("final chamfer {:.6}", last.gsp_chamfer);
            }
        }
        Command::Train => {
            let summary = cmd_train(&cfg, require_out(out)?)?;
            if let Some(last) = summary.epochs.last() {
                log::info!("final loss {:.6}", last.loss);
            }
        }
        Command::Sample { model, cloud } => {
            let opts = SampleOptions {
                n: cfg.sample.n,
                steps: cfg.sample.steps,
                eta: cfg.sample.eta,
                seed: cfg.seed,
            };
            let records = cmd_sample(&model, &cloud, &opts, require_out(out)?)?;
            log::info!("wrote {} grasps", records.len());
        }
        Command::Complete { model, cloud } => {
            let merged = cmd_complete(&model, &cloud, require_out(out)?)?;
            log::info!("wrote {} points", merged.len());
        }
        Command::Eval {
            grasps,
            object,
            plane,
            model,
        } => {
            let plane = match plane {
                Some(s) => parse_plane(&s)?,
                None => Plane::horizontal(0.0),
            };
            let hand = match model {
                Some(m) => ModelBundle::read(&m)?.hand,
                None => build_capsule_hand(cfg.hand_seed),
            };
            let report = cmd_eval(&grasps, &object, &plane, &hand, &cfg.eval, out)?;
            if out.is_none() {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
        }
    }
    Ok(())
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Error::Config("--out is required".into()))
}

fn parse_plane(s: &str) -> Result<Plane> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("plane {s:?}: {e}")))?;
    if v.len() != 4 {
        return Err(Error::Config(format!("plane {s:?}: expected nx,ny,nz,d")));
    }
    Plane::new(Point3::new(v[0], v[1], v[2]), v[3])
}
