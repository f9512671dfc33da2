//! `splatfuse`: synthesize scenes, reconstruct Gaussian splats from posed
//! images, render them and score the result.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use splatfuse_core::camera::{Intrinsics, Pose};
use splatfuse_core::io::dataset::{read_intrinsics, read_pose, write_color_png, write_depth_png};
use splatfuse_core::io::{export_ply, import_ply, load_scene, EngineConfig};
use splatfuse_core::pipeline::{Engine, Reconstruction, Timings};
use splatfuse_core::render::render;
use splatfuse_core::synthetic::{generate_scene, Preset, SceneSpec};

use manifest::{manifest_path, RunManifest};

const PRECEDENCE: &str = "Settings are resolved in order: built-in defaults, then the --config file \
(one `key = value` per line, or a `.json` run manifest from an earlier run), then command-line flags. \
Flags always win.";

#[derive(Parser, Debug)]
#[command(name = "splatfuse", version, about, after_help = PRECEDENCE)]
struct Cli {
    /// Engine configuration: `key = value` lines, or a run manifest (.json).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Maximum worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Seed for synthetic scene generation.
    #[arg(long, global = true, default_value_t = 0, value_name = "S")]
    seed: u64,

    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a procedural scene with exact ground-truth depth.
    Synth(SynthArgs),
    /// Reconstruct a Gaussian scene from context views and write it as PLY.
    Reconstruct(ReconstructArgs),
    /// Render a PLY scene from a camera.
    Render(RenderArgs),
    /// Reconstruct from context views and score renders of target views.
    Evaluate(EvaluateArgs),
}

/// Engine settings that can also come from the config file.
#[derive(Args, Debug, Default)]
struct EngineFlags {
    /// Number of depth planes.
    #[arg(long)]
    num_planes: Option<usize>,
    #[arg(long)]
    d_near: Option<f64>,
    #[arg(long)]
    d_far: Option<f64>,
    /// Relative depth threshold for merging triplets.
    #[arg(long)]
    delta: Option<f64>,
    /// Nearby views per plane sweep.
    #[arg(long)]
    nearby_views: Option<usize>,
    /// Softmax temperature over plane logits.
    #[arg(long)]
    temperature: Option<f64>,
    /// Splat scale in pixel footprints.
    #[arg(long)]
    kappa: Option<f64>,
    /// Latent fusion: blend or gru.
    #[arg(long)]
    fusion: Option<String>,
    /// Learned parameter file.
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,
    /// Background color `r,g,b` in [0, 1].
    #[arg(long, value_name = "R,G,B")]
    background: Option<String>,
    /// Any other setting, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl EngineFlags {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got {s:?}"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("num_planes", self.num_planes.map(|v| v.to_string()));
        push("d_near", self.d_near.map(|v| v.to_string()));
        push("d_far", self.d_far.map(|v| v.to_string()));
        push("delta", self.delta.map(|v| v.to_string()));
        push("nearby_views", self.nearby_views.map(|v| v.to_string()));
        push("temperature", self.temperature.map(|v| v.to_string()));
        push("kappa", self.kappa.map(|v| v.to_string()));
        push("fusion", self.fusion.clone());
        push("weights", self.weights.as_ref().map(|p| p.display().to_string()));
        push("background", self.background.clone());
        Ok(out)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// box-room, corridor or plane-wall.
    #[arg(long, default_value = "box-room")]
    preset: Preset,
    /// Number of views.
    #[arg(long, default_value_t = 10)]
    views: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
    /// Wall distance for plane-wall, meters.
    #[arg(long)]
    wall_depth: Option<f64>,
    /// Camera spacing for plane-wall, meters.
    #[arg(long)]
    baseline: Option<f64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Dataset directory.
    #[arg(long)]
    scene: PathBuf,
    /// Context view indices, fused in order (e.g. 0,1,2).
    #[arg(long, value_delimiter = ',', required = true)]
    views: Vec<usize>,
    /// Views never used as plane-sweep sources.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
    /// Output PLY path.
    #[arg(long)]
    out: PathBuf,
    /// Record per-stage timings in the manifest.
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Scene PLY.
    #[arg(long)]
    ply: PathBuf,
    /// Take pose, intrinsics and size from this dataset view (with --view).
    #[arg(long, requires = "view")]
    scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    view: Option<usize>,
    /// 4x4 camera-to-world pose file.
    #[arg(long, conflicts_with = "scene")]
    pose: Option<PathBuf>,
    /// 3x3 intrinsics file.
    #[arg(long, conflicts_with = "scene")]
    intrinsics: Option<PathBuf>,
    #[arg(long, conflicts_with = "scene")]
    width: Option<usize>,
    #[arg(long, conflicts_with = "scene")]
    height: Option<usize>,
    /// Output color PNG.
    #[arg(long)]
    out: PathBuf,
    /// Also write a 16-bit millimeter depth PNG.
    #[arg(long, value_name = "PATH")]
    depth_out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Context view indices.
    #[arg(long, value_delimiter = ',', required = true)]
    context: Vec<usize>,
    /// Target view indices to render and score.
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<usize>,
    /// Output JSON report.
    #[arg(long)]
    out: PathBuf,
    /// Include per-stage timings in the report.
    #[arg(long)]
    timings: bool,
    /// Also write the reconstruction as PLY.
    #[arg(long, value_name = "PATH")]
    ply_out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineFlags,
}

fn resolve_config(path: Option<&Path>, flags: &EngineFlags) -> Result<EngineConfig> {
    let mut cfg = match path {
        Some(p) if p.extension().is_some_and(|e| e == "json") => RunManifest::read(p)?.engine_config()?,
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    for (k, v) in flags.pairs()? {
        cfg.set(&k, &v).map_err(|m| anyhow!("{m}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.with_context(|| format!("[{name}]"))
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut spec = SceneSpec::new(args.preset, cli.seed, args.views, args.width, args.height);
    if let Some(d) = args.wall_depth {
        spec.wall_depth = d;
    }
    if let Some(b) = args.baseline {
        spec.baseline = b;
    }
    let start = Instant::now();
    let scene = stage("synth", generate_scene(spec, &args.out).map_err(Into::into))?;
    let loaded = stage("validate", load_scene(&args.out).map_err(Into::into))?;
    ensure!(loaded.len() == scene.views.len(), "[validate] wrote {} views, read back {}", scene.views.len(), loaded.len());

    let mut m = RunManifest::new("synth", &EngineConfig::default(), cli.seed, cli.threads);
    m.scene = Some(args.out.clone());
    m.outputs.push(args.out.clone());
    m.timings_ms.insert("synth".into(), ms(start));
    m.write(&manifest_path(&args.out))?;
    println!("wrote {} views of {} to {}", scene.views.len(), args.preset, args.out.display());
    Ok(())
}

fn reconstruct(cfg: &EngineConfig, scene: &Path, views: &[usize], exclude: &[usize]) -> Result<(Engine, splatfuse_core::io::SceneDataset, Reconstruction)> {
    let engine = stage("config", Engine::new(cfg.clone()).map_err(Into::into))?;
    let data = stage("load", load_scene(scene).map_err(Into::into))?;
    info!("loaded {} views from {}", data.len(), scene.display());
    let rec = stage("reconstruct", engine.reconstruct(&data.views, views, exclude).map_err(Into::into))?;
    Ok((engine, data, rec))
}

fn write_ply(rec: &Reconstruction, path: &Path) -> Result<()> {
    stage("export", export_ply(&rec.primitives, path).map_err(Into::into))?;
    let back = stage("validate", import_ply(path).map_err(Into::into))?;
    ensure!(back == rec.primitives, "[validate] {} does not read back identically", path.display());
    Ok(())
}

fn cmd_reconstruct(cli: &Cli, args: &ReconstructArgs) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), &args.engine)?;
    let (_, _, rec) = reconstruct(&cfg, &args.scene, &args.views, &args.exclude)?;
    let start = Instant::now();
    write_ply(&rec, &args.out)?;

    for (view, s) in rec.context.iter().zip(&rec.steps) {
        println!(
            "view {view}: global {} + local {} -> {} (merged {}, reduction {:.1}%)",
            s.input_global,
            s.input_local,
            s.output,
            s.merged,
            100.0 * s.reduction_ratio
        );
    }
    let t = &rec.totals;
    println!(
        "total: {} local triplets -> {} primitives (reduction {:.1}%)",
        t.local_input,
        t.output,
        100.0 * t.reduction_ratio
    );

    let mut m = RunManifest::new("reconstruct", &cfg, cli.seed, cli.threads);
    m.scene = Some(args.scene.clone());
    m.context = args.views.clone();
    m.targets = args.exclude.clone();
    m.outputs.push(args.out.clone());
    if args.timings {
        m.timings_ms = rec.timings.0.clone();
        m.timings_ms.insert("export".into(), ms(start));
    }
    m.write(&manifest_path(&args.out))
}

fn camera(args: &RenderArgs) -> Result<(Pose, Intrinsics)> {
    if let (Some(scene), Some(i)) = (&args.scene, args.view) {
        let data = stage("load", load_scene(scene).map_err(Into::into))?;
        let v = stage("load", data.view(i).map_err(Into::into))?;
        return Ok((v.pose, v.intrinsics));
    }
    let (Some(pose), Some(k), Some(w), Some(h)) = (&args.pose, &args.intrinsics, args.width, args.height) else {
        bail!("render needs --scene and --view, or --pose, --intrinsics, --width and --height");
    };
    let pose = stage("load", read_pose(pose).map_err(Into::into))?;
    let intr = stage("load", read_intrinsics(k, w, h).map_err(Into::into))?;
    Ok((pose, intr))
}

fn cmd_render(cli: &Cli, args: &RenderArgs) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), &args.engine)?;
    let prims = stage("load", import_ply(&args.ply).map_err(Into::into))?;
    let (pose, intr) = camera(args)?;
    let rcfg = splatfuse_core::render::RenderConfig {
        background: cfg.background,
        tile_size: cfg.tile_size,
        ..Default::default()
    };
    let start = Instant::now();
    let frame = stage("render", render(&prims, &pose, &intr, &rcfg).map_err(Into::into))?;
    let render_ms = ms(start);
    stage("write", write_color_png(&args.out, &frame.color).map_err(Into::into))?;
    let mut m = RunManifest::new("render", &cfg, cli.seed, cli.threads);
    m.scene = args.scene.clone();
    m.targets = args.view.into_iter().collect();
    m.outputs.push(args.out.clone());
    if let Some(d) = &args.depth_out {
        stage("write", write_depth_png(d, &frame.depth).map_err(Into::into))?;
        m.outputs.push(d.clone());
    }
    m.timings_ms.insert("render".into(), render_ms);
    println!("rendered {} primitives at {}x{}", prims.len(), intr.width, intr.height);
    m.write(&manifest_path(&args.out))
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref(), &args.engine)?;
    let (engine, data, rec) = reconstruct(&cfg, &args.scene, &args.context, &args.targets)?;
    let mut timings = Timings::default();
    let mut report = stage("evaluate", engine.evaluate(&data, &rec, &args.targets, &mut timings).map_err(Into::into))?;
    let mut all = rec.timings.clone();
    all.merge(&timings);
    if args.timings {
        report.timings_ms = all.0.clone();
    }
    stage("write", report.write(&args.out).map_err(Into::into))?;

    let mut m = RunManifest::new("evaluate", &cfg, cli.seed, cli.threads);
    m.scene = Some(args.scene.clone());
    m.context = args.context.clone();
    m.targets = args.targets.clone();
    m.outputs.push(args.out.clone());
    if let Some(p) = &args.ply_out {
        write_ply(&rec, p)?;
        m.outputs.push(p.clone());
    }
    if args.timings {
        m.timings_ms = all.0;
    }
    println!("psnr {:.3} dB, ssim {:.4}, {} primitives", report.psnr, report.ssim, report.num_gaussians);
    m.write(&manifest_path(&args.out))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Reconstruct(a) => cmd_reconstruct(cli, a),
        Command::Render(a) => cmd_render(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
