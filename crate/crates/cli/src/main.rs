use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radcam_core::pipeline::{
    ablate, detect, evaluate_bypass, evaluate_model, gradsuite, load_checkpoint, load_samples, prepare_all,
    save_checkpoint, save_pgm, to_gray, train, write_overlay_ppm, AblationAxis, Pipeline, PipelineConfig,
};
use radcam_core::synthlab::{generate_scene, load_scene_dir, save_scene_dir, Scene, SceneSpec};
use radcam_core::Error;
use serde::Serialize;

/// Radar-camera BEV fusion on synthetic scenes.
#[derive(Parser)]
#[command(name = "zfuse", version)]
struct Cli {
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes as directories.
    GenScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes; defaults to the configured training set size.
        #[arg(long)]
        count: Option<usize>,
        /// Write the held-out scenes instead of the training scenes.
        #[arg(long)]
        test: bool,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gradsuite::DEFAULT_INSTANCES)]
        instances: usize,
        /// Directory for gradcheck.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on synthetic scenes; writes a checkpoint and the loss curve.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on held-out scenes.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene directories to score; default is the configured test split.
        #[arg(long = "scene")]
        scenes: Vec<PathBuf>,
        /// Overrides the number of generated test scenes.
        #[arg(long)]
        test_scenes: Option<usize>,
        /// Score the ground truth against itself.
        #[arg(long)]
        bypass: bool,
        /// Directory for eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every setting of one ablation axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// fuser, fp-layers, lss, order, frames or modality.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the radar, camera and fused BEV maps as images.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene directory; default is the first test scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Verification failures exit with 1, bad input with 2.
enum Failure {
    Verification(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } | Error::NonFiniteGradient { .. } => Failure::Verification(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Usage(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn scene_spec(cfg: &PipelineConfig, seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        ..cfg.scene.clone()
    }
}

fn gen_scenes(cfg: &PipelineConfig, out: &Path, count: Option<usize>, test: bool) -> CmdResult {
    let mut seeds = if test { cfg.test_seeds() } else { cfg.train_seeds() };
    if let Some(n) = count {
        let mut c = cfg.clone();
        c.train.scenes = n;
        c.eval.test_scenes = n;
        seeds = if test { c.test_seeds() } else { c.train_seeds() };
    }
    std::fs::create_dir_all(out)?;
    for seed in seeds {
        let scene = generate_scene(&scene_spec(cfg, seed))?;
        save_scene_dir(&scene, &out.join(format!("scene_{seed:016x}")))?;
    }
    Ok(())
}

fn gradcheck(seed: u64, instances: usize, out: Option<&Path>) -> CmdResult {
    let report = gradsuite::run_suite(&gradsuite::default_registry(), instances, seed, gradsuite::TOLERANCE);
    if let Some(dir) = out {
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    print_json(&report);
    let failed: Vec<&str> = report.failures().map(|o| o.op.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn train_cmd(mut cfg: PipelineConfig, out: &Path, scenes: Option<usize>, epochs: Option<usize>) -> CmdResult {
    if let Some(n) = scenes {
        cfg.train.scenes = n;
    }
    if let Some(n) = epochs {
        cfg.train.epochs = n;
    }
    let pipe = Pipeline::new(cfg)?;
    let samples = load_samples(&pipe, &pipe.config.train_seeds())?;
    let mut params = pipe.init_params(pipe.config.seed)?;
    let report = train(&pipe, &mut params, &samples)?;
    save_checkpoint(out, &pipe.config, &params)?;
    write_json(&out.join("train.json"), &report)?;
    log::info!(
        "initial loss {:.6}, final loss {:.6}",
        report.initial_loss,
        report.final_loss
    );
    print_json(&report);
    Ok(())
}

fn evaluate_cmd(
    checkpoint: &Path,
    scene_dirs: &[PathBuf],
    test_scenes: Option<usize>,
    bypass: bool,
    out: Option<&Path>,
) -> CmdResult {
    let (mut pipe, params) = load_checkpoint(checkpoint)?;
    if let Some(n) = test_scenes {
        pipe.config.eval.test_scenes = n;
    }
    let samples = if scene_dirs.is_empty() {
        load_samples(&pipe, &pipe.config.test_seeds())?
    } else {
        let scenes = scene_dirs
            .iter()
            .map(|d| load_scene_dir(d))
            .collect::<Result<Vec<Scene>, _>>()?;
        prepare_all(&pipe, &scenes)?
    };
    let report = if bypass {
        evaluate_bypass(&pipe, &samples)?
    } else {
        evaluate_model(&pipe, &params, &samples)?
    };
    if let Some(dir) = out {
        write_json(&dir.join("eval.json"), &report)?;
    }
    print_json(&report);
    Ok(())
}

fn ablate_cmd(cfg: &PipelineConfig, axis: &str, out: &Path) -> CmdResult {
    let axis: AblationAxis = axis.parse()?;
    let report = ablate(cfg, axis)?;
    write_json(&out.join(format!("ablate_{axis}.json")), &report)?;
    print_json(&report);
    Ok(())
}

fn render_cmd(checkpoint: &Path, scene: Option<&Path>, out: &Path) -> CmdResult {
    let (pipe, params) = load_checkpoint(checkpoint)?;
    let scene = match scene {
        Some(d) => load_scene_dir(d)?,
        None => {
            let seed = pipe.config.test_seeds().first().copied().unwrap_or(pipe.config.seed);
            generate_scene(&scene_spec(&pipe.config, seed))?
        }
    };
    let sample = pipe.prepare(&scene)?;
    let trace = pipe.forward(&params, &sample)?;
    std::fs::create_dir_all(out)?;
    let mut fused_img = None;
    for (name, map) in [
        ("radar", &trace.radar_map.tensor),
        ("camera", &trace.camera_map.tensor),
        ("fused", &trace.fused.tensor),
    ] {
        let (img, degenerate) = to_gray(map)?;
        if degenerate {
            log::warn!("{name} map is constant; rendered mid-gray");
        }
        save_pgm(&out.join(format!("{name}.pgm")), &img)?;
        if name == "fused" {
            fused_img = Some(img);
        }
    }
    let detections = detect(&pipe, &params, &sample)?;
    let mut w = BufWriter::new(File::create(out.join("boxes.ppm"))?);
    write_overlay_ppm(
        &mut w,
        &fused_img.expect("fused map rendered"),
        &pipe.config.scene.grid,
        &sample.boxes,
        &detections,
    )?;
    w.flush()?;
    Ok(())
}

fn effective_config(command: &Command) -> Result<PipelineConfig, Failure> {
    match command {
        Command::GenScenes { common, .. } | Command::Train { common, .. } | Command::Ablate { common, .. } => {
            load_config(common)
        }
        Command::Evaluate { checkpoint, .. } | Command::Render { checkpoint, .. } => {
            Ok(load_checkpoint(checkpoint)?.0.config)
        }
        Command::Gradcheck { .. } => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> CmdResult {
    if cli.print_effective_config {
        let cfg = effective_config(&cli.command)?;
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    match cli.command {
        Command::GenScenes {
            common,
            out,
            count,
            test,
        } => gen_scenes(&load_config(&common)?, &out, count, test),
        Command::Gradcheck { seed, instances, out } => gradcheck(seed, instances, out.as_deref()),
        Command::Train {
            common,
            out,
            scenes,
            epochs,
        } => train_cmd(load_config(&common)?, &out, scenes, epochs),
        Command::Evaluate {
            checkpoint,
            scenes,
            test_scenes,
            bypass,
            out,
        } => evaluate_cmd(&checkpoint, &scenes, test_scenes, bypass, out.as_deref()),
        Command::Ablate { common, axis, out } => ablate_cmd(&load_config(&common)?, &axis, &out),
        Command::Render { checkpoint, scene, out } => render_cmd(&checkpoint, scene.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
