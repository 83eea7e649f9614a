use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unmixsr_core::harness::checkpoint::Checkpoint;
use unmixsr_core::harness::config::RunConfig;
use unmixsr_core::harness::motivation::misregistration_sweep;
use unmixsr_core::harness::train::{train, TrainOptions};
use unmixsr_core::harness::{container, data, evaluate, fuse};
use unmixsr_core::scene_sim::{blur_downsample, misregister, project_to_rgb, synth_scene, MisregistrationSpec, SpectralResponse};
use unmixsr_core::{metrics, Error, HsiCube, RgbImage};

const THREADS_ENV: &str = "UNMIXSR_THREADS";
const MOTIVATION_LEVELS: [f64; 5] = [0.0, 2.0, 4.0, 6.0, 8.0];

#[derive(Parser)]
#[command(name = "unmixsr", version, about = "Unmixing-based hyperspectral super-resolution with a misaligned RGB guide")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed (training seed for `train`, scene seed elsewhere).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["4", "8", "16"])]
    scale: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a seeded HR cube.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blur and decimate an HR cube and render a misregistered RGB reference.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Output directory receiving `lr.bhsi` and `ref.bhsi`.
        #[arg(long)]
        out: PathBuf,
    },
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint and the bicubic baseline on the held-out scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Fuse {
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional false-color PNG of the result.
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Direct-mixing comparison over a misregistration sweep.
    Motivate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR, SSIM and SAM between two cubes.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common, seed_is_train: bool) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &c.scale {
        cfg.scale_factor = s.parse().expect("restricted by the parser");
    }
    if seed_is_train {
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scene_seed(c: &Common, cfg: &RunConfig) -> u64 {
    c.seed.unwrap_or(cfg.data_seed)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load_config(&common, false)?;
            let hr = synth_scene(&cfg.scene(scene_seed(&common, &cfg)))?;
            container::write(&out, hr.raster())
        }
        Command::Degrade { common, input, out } => {
            let cfg = load_config(&common, false)?;
            let hr = HsiCube::from_raster(container::read(&input)?);
            let lr = blur_downsample(&hr, cfg.blur_kernel, cfg.blur_sigma, cfg.scale_factor)?;
            let rgb = project_to_rgb(&hr, &SpectralResponse::default_rgb(hr.bands()))?;
            let spec = MisregistrationSpec::at_level(cfg.misregistration_px, scene_seed(&common, &cfg), hr.width(), hr.height());
            let reference: RgbImage = misregister(&rgb, &spec)?;
            std::fs::create_dir_all(&out)?;
            container::write(&out.join("lr.bhsi"), lr.raster())?;
            container::write(&out.join("ref.bhsi"), reference.raster())
        }
        Command::Train { common, out, resume } => {
            let cfg = load_config(&common, true)?;
            let report = train(&cfg, &TrainOptions { out_dir: out, resume, stop_after_epochs: None })?;
            if let Some((step, loss)) = report.losses.last() {
                println!("step {step} loss {loss:.6}");
            }
            println!("checkpoint {}", report.checkpoint_path.display());
            Ok(())
        }
        Command::Eval { common, checkpoint, out } => {
            let cfg = load_config(&common, false)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let seeds = match common.seed {
                Some(s) => vec![s],
                None => data::test_seeds(&cfg),
            };
            let pairs = data::make_pairs(&cfg, &seeds)?;
            let report = evaluate::evaluate(&ck, &pairs)?;
            report.write(&out)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Fuse { lr, reference, checkpoint, out, preview } => {
            fuse::fuse(&lr, &reference, &checkpoint, &out, preview.as_deref()).map(|_| ())
        }
        Command::Motivate { common, out } => {
            let cfg = load_config(&common, false)?;
            let seed = scene_seed(&common, &cfg);
            let sweep = misregistration_sweep(&cfg.scene(seed), &MOTIVATION_LEVELS, seed, cfg.scale_factor, cfg.endmembers)?;
            std::fs::create_dir_all(&out)?;
            write_json(&out.join("motivation.json"), &sweep)?;
            for e in &sweep.entries {
                let v: Vec<String> =
                    e.report.variants.iter().map(|v| format!("{} {}", v.name, v.metrics.psnr)).collect();
                println!("{:>4} px  {}", e.misregistration_px, v.join("  "));
            }
            println!("rgb abundance monotone: {}", sweep.rgb_abundance_monotone);
            Ok(())
        }
        Command::Metrics { pred, truth, out } => {
            let report = metrics::report(&container::read(&pred)?, &container::read(&truth)?)?;
            println!("{}", serde_json::to_string(&report).map_err(|e| Error::Io(e.into()))?);
            match out {
                Some(p) => write_json(&p, &report),
                None => Ok(()),
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 2,
        Error::Format { .. } | Error::Io(_) => 3,
        Error::Numerical(_) | Error::ZeroInput(_) | Error::DegenerateInput(_) => 4,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
