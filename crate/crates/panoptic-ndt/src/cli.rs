//! The `pndt` command-line surface tying the pipeline together.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classes::{ClassKind, ClassTable};
use crate::eval::{evaluate_2d, evaluate_3d};
use crate::integrator::process_frame_decisions;
use crate::io::dataset::{
    depth_to_mm, read_cloud, read_dataset, read_intrinsics, read_pose, write_cloud,
    write_dataset, write_pgm16, write_pgm8, write_text,
};
use crate::io::map_file::{load_map, save_map};
use crate::io::ply::{export_ply, PlyMode};
use crate::map::PanopticMap;
use crate::params::MapParams;
use crate::propagation::export_labels;
use crate::renderer::render_view;
use crate::sim::{apply_noise, raycast_frame, sample_gt_cloud, NoiseSpec, SceneSpec};

#[derive(Parser)]
#[command(name = "pndt", version, about = "Panoptic occupancy NDT mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a dataset directory
    Simulate(SimulateArgs),
    /// Integrate a dataset into a panoptic NDT map
    Map(MapCmdArgs),
    /// Back-project a saved map into a camera and write label rasters
    Render(RenderArgs),
    /// Score map back-projections against the dataset labels
    Eval2d(Eval2dArgs),
    /// Score a map against an annotated ground-truth cloud
    Eval3d(Eval3dArgs),
    /// Export the map as a colored point cloud
    ExportPly(ExportPlyArgs),
    /// Measure mapping throughput over a dataset
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Dataset-benchmark thresholds
    Benchmark,
    /// Real-world application thresholds (stricter instance matching)
    Application,
}

#[derive(Args)]
struct ParamArgs {
    /// Threshold preset to start from
    #[arg(long, value_enum, default_value = "benchmark")]
    profile: Profile,
    /// Voxel edge length in meters
    #[arg(long)]
    voxel_size: Option<f64>,
    /// Stuff-proportion threshold (Eq. 4 gate)
    #[arg(long)]
    theta_st: Option<f64>,
    /// Back-projected instance mass share
    #[arg(long)]
    theta_b: Option<f64>,
    /// Minimum IoU to accept a match
    #[arg(long)]
    theta_m: Option<f64>,
    /// Maximum IoU to allocate a new instance
    #[arg(long)]
    theta_n: Option<f64>,
    /// Minimum semantic score to integrate
    #[arg(long)]
    theta_l: Option<f64>,
    /// Minimum panoptic score to integrate
    #[arg(long)]
    theta_z: Option<f64>,
    /// Minimum instance/semantic observation ratio to propagate things
    #[arg(long)]
    theta_o: Option<f64>,
    /// Maximum mapping distance in meters
    #[arg(long)]
    max_depth: Option<f64>,
    /// Back-projection ellipse radius in sigmas
    #[arg(long)]
    k_sigma: Option<f64>,
}

impl ParamArgs {
    fn build(&self) -> Result<MapParams> {
        let mut p = match self.profile {
            Profile::Benchmark => MapParams::default(),
            Profile::Application => MapParams::application_profile(),
        };
        if let Some(v) = self.voxel_size {
            p.voxel_size = v;
        }
        if let Some(v) = self.theta_st {
            p.theta_st = v;
        }
        if let Some(v) = self.theta_b {
            p.theta_b = v;
        }
        if let Some(v) = self.theta_m {
            p.theta_m = v;
        }
        if let Some(v) = self.theta_n {
            p.theta_n = v;
        }
        if let Some(v) = self.theta_l {
            p.theta_l = v;
        }
        if let Some(v) = self.theta_z {
            p.theta_z = v;
        }
        if let Some(v) = self.theta_o {
            p.theta_o = v;
        }
        if let Some(v) = self.max_depth {
            p.max_depth = v;
        }
        if let Some(v) = self.k_sigma {
            p.k_sigma = v;
        }
        p.validate().context("invalid parameters")?;
        Ok(p)
    }
}

/// Simulation config file: the class table plus the scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Non-void classes in id order starting at 1.
    pub classes: Vec<ClassEntry>,
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    /// "stuff" or "thing"
    pub kind: String,
}

impl SimConfig {
    pub fn class_table(&self) -> Result<ClassTable> {
        let mut entries = Vec::new();
        for c in &self.classes {
            let kind = match c.kind.as_str() {
                "stuff" => ClassKind::Stuff,
                "thing" => ClassKind::Thing,
                other => bail!("unknown class kind {:?} for {:?}", other, c.name),
            };
            entries.push((c.name.as_str(), kind));
        }
        ClassTable::new(&entries).map_err(|e| anyhow::anyhow!("{e}"))
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene config (JSON: classes + scene)
    #[arg(long)]
    scene: PathBuf,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Depth noise sigma at 1 m (scaled by depth squared)
    #[arg(long, default_value_t = 0.0)]
    noise_depth_sigma: f64,
    /// Semantic flip probability
    #[arg(long, default_value_t = 0.0)]
    noise_flip_prob: f64,
    /// Confusable class pairs, e.g. 4:5 (repeatable)
    #[arg(long = "noise-confusion", value_parser = parse_confusion)]
    noise_confusions: Vec<(u8, u8)>,
    /// Instance border erosion in pixels
    #[arg(long, default_value_t = 0)]
    noise_erode: u32,
    /// Base RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also sample a ground-truth cloud at this density (points/m^2)
    #[arg(long)]
    cloud_density: Option<f64>,
}

fn parse_confusion(s: &str) -> Result<(u8, u8), String> {
    let (a, b) = s.split_once(':').ok_or("expected FROM:TO")?;
    Ok((
        a.parse().map_err(|_| "bad FROM class id")?,
        b.parse().map_err(|_| "bad TO class id")?,
    ))
}

#[derive(Args)]
struct MapCmdArgs {
    /// Input dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output map file
    #[arg(long)]
    out: PathBuf,
    /// Write per-frame match decisions to this file
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    /// Camera pose file (16 numbers, row-major 4x4)
    #[arg(long)]
    pose: PathBuf,
    /// Intrinsics file (fx fy cx cy width height)
    #[arg(long)]
    intrinsics: PathBuf,
    /// Output prefix; writes PREFIX.{sem,pan,inst,depth}.pgm
    #[arg(long)]
    out_prefix: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct Eval2dArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Write the flat key-value records here as well
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct Eval3dArgs {
    #[arg(long)]
    map: PathBuf,
    /// Cloud file (x y z class_id instance_id per line)
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ExportPlyArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// semantic | instance | panoptic
    #[arg(long, default_value = "panoptic")]
    mode: PlyMode,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

/// Run the CLI; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version output.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e);
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Map(args) => map_dataset(args),
        Command::Render(args) => render(args),
        Command::Eval2d(args) => eval2d(args),
        Command::Eval3d(args) => eval3d(args),
        Command::ExportPly(args) => export(args),
        Command::Bench(args) => bench(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.scene)
        .with_context(|| format!("reading {}", args.scene.display()))?;
    let config: SimConfig = serde_json::from_str(&text).context("parsing scene config")?;
    let table = config.class_table()?;
    config.scene.validate().map_err(|e| anyhow::anyhow!("{e}"))?;

    let n = config.scene.frame_count();
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let clean = raycast_frame(&config.scene, i).map_err(|e| anyhow::anyhow!("{e}"))?;
        let frame = if args.noise_depth_sigma > 0.0
            || args.noise_flip_prob > 0.0
            || args.noise_erode > 0
        {
            let noise = NoiseSpec {
                depth_sigma_at_1m: args.noise_depth_sigma,
                sem_flip_prob: args.noise_flip_prob,
                confusions: args.noise_confusions.clone(),
                border_erode_px: args.noise_erode,
                seed: args.seed.wrapping_add(i as u64),
            };
            apply_noise(&clean, &noise)
        } else {
            clean
        };
        frames.push(frame);
    }
    write_dataset(&args.out, &table, &frames)?;
    if let Some(density) = args.cloud_density {
        let cloud = sample_gt_cloud(&config.scene, density, args.seed.wrapping_add(0x9E37_79B9))
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        write_cloud(&args.out.join("cloud.txt"), &cloud)?;
        println!("cloud points {}", cloud.points.len());
    }
    println!("frames {}", frames.len());
    Ok(())
}

fn map_dataset(args: MapCmdArgs) -> Result<()> {
    let params = args.params.build()?;
    let (table, _, frames) = read_dataset(&args.dataset)?;
    let mut map = PanopticMap::new(params.voxel_size, table).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut trace_lines = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let (_, decisions) =
            process_frame_decisions(&mut map, frame, &params).with_context(|| format!("frame {}", i))?;
        if args.trace.is_some() {
            for d in &decisions {
                trace_lines.push(d.trace_line(i));
            }
        }
    }
    if let Some(trace_path) = &args.trace {
        write_text(trace_path, &(trace_lines.join("\n") + "\n"))?;
    }
    save_map(&map, &args.out)?;
    println!(
        "frames {} voxels {} instances {}",
        frames.len(),
        map.num_voxels(),
        map.next_global_id() - 1
    );
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let params = args.params.build()?;
    let mut map = load_map(&args.map)?;
    let pose = read_pose(&args.pose)?;
    let intr = read_intrinsics(&args.intrinsics)?;
    let voxels = export_labels(&mut map, params.theta_st, params.theta_o);
    let view = render_view(&voxels, &intr, &pose, params.k_sigma, params.max_depth);

    let prefix = args.out_prefix.as_os_str().to_string_lossy().to_string();
    let with_suffix = |s: &str| PathBuf::from(format!("{}.{}", prefix, s));
    write_pgm8(&with_suffix("sem.pgm"), &view.sem)?;
    write_pgm8(&with_suffix("pan.pgm"), &view.pan_class)?;
    let inst16 = {
        if let Some(&big) = view.instance.data().iter().find(|&&id| id > u16::MAX as u64) {
            bail!("instance id {} does not fit the 16-bit raster", big);
        }
        view.instance.map(|&id| id as u16)
    };
    write_pgm16(&with_suffix("inst.pgm"), &inst16)?;
    write_pgm16(&with_suffix("depth.pgm"), &depth_to_mm(&view.depth.map(|&d| {
        if d.is_finite() {
            d
        } else {
            0.0
        }
    })))?;
    println!("rendered {}x{}", intr.width, intr.height);
    Ok(())
}

fn eval2d(args: Eval2dArgs) -> Result<()> {
    let params = args.params.build()?;
    let mut map = load_map(&args.map)?;
    let (_, _, frames) = read_dataset(&args.dataset)?;
    let report = evaluate_2d(&mut map, &frames, &params);
    let records = report.records(map.class_table());
    print!("{}", records);
    if let Some(out) = &args.out {
        write_text(out, &records)?;
    }
    Ok(())
}

fn eval3d(args: Eval3dArgs) -> Result<()> {
    let params = args.params.build()?;
    let mut map = load_map(&args.map)?;
    let cloud = read_cloud(&args.cloud)?;
    let report = evaluate_3d(&mut map, &cloud, &params);
    let records = report.records(map.class_table());
    print!("{}", records);
    if let Some(out) = &args.out {
        write_text(out, &records)?;
    }
    Ok(())
}

fn export(args: ExportPlyArgs) -> Result<()> {
    let params = args.params.build()?;
    let map = load_map(&args.map)?;
    export_ply(&map, &args.out, args.mode, &params)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let params = args.params.build()?;
    let (table, _, frames) = read_dataset(&args.dataset)?;
    let mut map = PanopticMap::new(params.voxel_size, table).map_err(|e| anyhow::anyhow!("{e}"))?;
    let start = Instant::now();
    for (i, frame) in frames.iter().enumerate() {
        crate::integrator::process_frame(&mut map, frame, &params)
            .with_context(|| format!("frame {}", i))?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "frames {} seconds {:.3} fps {:.3} voxels {}",
        frames.len(),
        elapsed,
        frames.len() as f64 / elapsed,
        map.num_voxels()
    );
    Ok(())
}
