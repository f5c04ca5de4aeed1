use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use mosaicmem::flow_ode::{gaussian_init, integrate, Method, OdeError, DEFAULT_STEPS};
use mosaicmem::grid::Grid;
use mosaicmem::io::{self, IoError, Tensor, TensorData};
use mosaicmem::manipulation::{self, ManipulationError, RigidTransform, Selection};
use mosaicmem::memory::{first_frame_footprint, MemoryError, PatchId, RetrievalMode, RetrievalParams};
use mosaicmem::metrics::{rot_err, trajectory_length, trans_err, dynamic_score, MetricsError};
use mosaicmem::pipeline::{self, score_mosaic, Conditioning, PipelineError};
use mosaicmem::simulator::{self, Dataset, SimError, SimulationSpec};
use mosaicmem::warping::{WarpPolicy, WarpStrategy};
use mosaicmem::{Camera, Vec3};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(e) => e.into(),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MemoryError> for CliError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::InvalidParameter(_) | MemoryError::DimensionMismatch(_) => CliError::Usage(e.to_string()),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ManipulationError> for CliError {
    fn from(e: ManipulationError) -> Self {
        match e {
            ManipulationError::Memory(e) => e.into(),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Memory(e) => e.into(),
            PipelineError::Frame(_) => CliError::Usage(e.to_string()),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::NoSteps => CliError::Usage(e.to_string()),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mosaicmem", version, about = "Patch-level spatial memory over synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset from a JSON scene/trajectory spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lift dataset frames into a memory directory.
    Lift {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        patch_size: usize,
        /// Comma-separated frame indices; all frames by default.
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
    },
    /// Retrieve and warp memory patches for a query camera.
    Retrieve(RetrieveArgs),
    /// Edit memory directories.
    #[command(subcommand)]
    Mem(MemCommand),
    /// Score a retrieval against the dataset frame it was queried for.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        retrieval: PathBuf,
        /// Dataset frame to compare against; defaults to the recorded one.
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Composite a retrieval onto its query canvas as a PPM.
    Preview {
        #[arg(long)]
        retrieval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per latent cell in the output; defaults to the downsample.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Integrate an analytic vector field.
    OdeDemo {
        #[arg(long, value_enum, default_value_t = Field::Linear)]
        field: Field,
        #[arg(long, value_enum, default_value_t = MethodArg::Heun)]
        method: MethodArg,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Retrieval directory passed through to the field as conditioning.
        #[arg(long)]
        retrieval: Option<PathBuf>,
    },
    /// Print the header of a tensor file.
    Inspect { file: PathBuf },
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    memory: PathBuf,
    /// Query camera JSON `{fx,fy,cx,cy,width,height,R,t}`.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Dense)]
    mode: ModeArg,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    #[arg(long)]
    max_patches: Option<usize>,
    /// Mask the query footprint of the first frame's memory.
    #[arg(long)]
    skip_first_frame: bool,
    #[arg(long, default_value_t = 0)]
    first_frame: usize,
    #[arg(long, default_value_t = 0.25)]
    occlusion_threshold: f64,
    #[arg(long, default_value_t = 0.01)]
    depth_tolerance: f64,
    /// Fraction of patches conditioned by warped RoPE; the rest use the
    /// warped latent. Without it every patch carries both.
    #[arg(long)]
    mix_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    mix_seed: u64,
    /// Temporal compression: frame `time` maps to latent frame `time / s`.
    #[arg(long, default_value_t = 4)]
    s: usize,
    /// Original frame index of the query.
    #[arg(long, default_value_t = 0)]
    time: usize,
}

#[derive(Subcommand)]
enum MemCommand {
    Delete {
        #[command(flatten)]
        io: MemIo,
        #[command(flatten)]
        sel: SelectionArgs,
    },
    Duplicate {
        #[command(flatten)]
        io: MemIo,
        #[command(flatten)]
        sel: SelectionArgs,
        /// JSON `{R:[9], t:[3], s}`.
        #[arg(long)]
        transform: PathBuf,
    },
    Relocate {
        #[command(flatten)]
        io: MemIo,
        #[command(flatten)]
        sel: SelectionArgs,
        #[arg(long)]
        transform: PathBuf,
    },
    Stitch {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        transform: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MemIo {
    #[arg(long)]
    memory: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectionArgs {
    /// Comma-separated patch ids.
    #[arg(long, value_delimiter = ',')]
    ids: Option<Vec<u64>>,
    /// World box `xmin,ymin,zmin,xmax,ymax,zmax` tested on patch centroids.
    #[arg(long = "box", value_delimiter = ',', allow_negative_numbers = true)]
    world_box: Option<Vec<f64>>,
    /// Select every patch.
    #[arg(long)]
    all: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dense,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    Zero,
    Constant,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Euler,
    Heun,
}

fn read_camera(path: &Path) -> Result<Camera> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: bad camera: {e}", path.display())))
}

fn read_transform(path: &Path) -> Result<RigidTransform> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: bad transform: {e}", path.display())))
}

fn selection(args: &SelectionArgs, memory: &mosaicmem::memory::MosaicMemory) -> Result<Selection> {
    match (&args.ids, &args.world_box, args.all) {
        (Some(ids), None, false) => Ok(Selection::Ids(ids.iter().map(|i| PatchId(*i)).collect())),
        (None, Some(b), false) if b.len() != 6 => Err(CliError::Usage(format!("--box takes 6 values, got {}", b.len()))),
        (None, Some(b), false) => Ok(Selection::WorldBox {
            min: Vec3::new(b[0], b[1], b[2]),
            max: Vec3::new(b[3], b[4], b[5]),
        }),
        (None, None, true) => Ok(Selection::all(memory)),
        _ => Err(CliError::Usage("give exactly one of --ids, --box, --all".into())),
    }
}

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn cmd_simulate(spec: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).map_err(|e| CliError::Io(format!("{}: {e}", spec.display())))?;
    let spec: SimulationSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", spec.display())))?;
    let ds = simulator::simulate(&spec)?;
    let m = ds.write(out)?;
    print_json(&json!({
        "frames": m.frames.len(),
        "revisit_pairs": m.revisit_pairs.len(),
        "out": out,
    }));
    Ok(())
}

fn cmd_lift(dataset: &Path, out: &Path, patch_size: usize, frames: Option<Vec<usize>>) -> Result<()> {
    let ds = Dataset::load(dataset)?;
    let frames = frames.unwrap_or_else(|| (0..ds.len()).collect());
    let memory = pipeline::lift_dataset(&ds, frames, patch_size)?;
    io::write_memory(out, &memory)?;
    print_json(&json!({ "patches": memory.len(), "voxel_size": memory.voxel_size() }));
    Ok(())
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<()> {
    let query = read_camera(&a.camera)?;
    let memory = io::read_memory(&a.memory)?;
    if a.s == 0 {
        return Err(CliError::Usage("--s must be >= 1".into()));
    }
    let policy = match a.mix_ratio {
        Some(r) if (0.0..=1.0).contains(&r) => WarpPolicy::Mixture { ratio: r, seed: a.mix_seed },
        Some(r) => return Err(CliError::Usage(format!("--mix-ratio {r} outside [0, 1]"))),
        None => WarpPolicy::Fixed(WarpStrategy::Both),
    };
    let params = RetrievalParams {
        mode: match a.mode {
            ModeArg::Dense => RetrievalMode::Dense,
            ModeArg::Sparse => RetrievalMode::Sparse { stride: a.stride },
        },
        occlusion_threshold: a.occlusion_threshold,
        depth_tolerance: a.depth_tolerance,
        max_patches: a.max_patches,
        skip_region: a
            .skip_first_frame
            .then(|| first_frame_footprint(&memory, &query, a.first_frame)),
    };
    let latent_time = (a.time / a.s) as i64;
    let c = pipeline::condition(&memory, &query, latent_time, &params, &policy)?;
    let settings = json!({
        "frame": a.time,
        "s": a.s,
        "mode": match a.mode { ModeArg::Dense => "dense", ModeArg::Sparse => "sparse" },
        "stride": a.stride,
        "max_patches": a.max_patches,
        "skip_first_frame": a.skip_first_frame,
        "occlusion_threshold": a.occlusion_threshold,
        "depth_tolerance": a.depth_tolerance,
        "mix_ratio": a.mix_ratio,
    });
    io::write_retrieval(&a.out, &c, settings)?;
    print_json(&json!({
        "patches": c.patches.len(),
        "ids": c.patches.iter().map(|p| p.retrieved.id.0).collect::<Vec<_>>(),
        "latent_time": latent_time,
    }));
    Ok(())
}

fn cmd_mem(cmd: MemCommand) -> Result<()> {
    let (out, memory, touched) = match cmd {
        MemCommand::Delete { io: mio, sel } => {
            let m = io::read_memory(&mio.memory)?;
            let s = selection(&sel, &m)?;
            let ids = s.resolve(&m);
            (mio.out, manipulation::delete(&m, &s), ids)
        }
        MemCommand::Duplicate { io: mio, sel, transform } => {
            let xf = read_transform(&transform)?;
            let m = io::read_memory(&mio.memory)?;
            let s = selection(&sel, &m)?;
            let (r, ids) = manipulation::duplicate(&m, &s, &xf)?;
            (mio.out, r, ids)
        }
        MemCommand::Relocate { io: mio, sel, transform } => {
            let xf = read_transform(&transform)?;
            let m = io::read_memory(&mio.memory)?;
            let s = selection(&sel, &m)?;
            let (r, ids) = manipulation::relocate(&m, &s, &xf)?;
            (mio.out, r, ids)
        }
        MemCommand::Stitch { a, b, transform, out } => {
            let xf = read_transform(&transform)?;
            let ma = io::read_memory(&a)?;
            let mb = io::read_memory(&b)?;
            let (r, ids) = manipulation::stitch(&ma, &mb, &xf)?;
            (out, r, ids)
        }
    };
    io::write_memory(&out, &memory)?;
    print_json(&json!({
        "patches": memory.len(),
        "affected": touched.iter().map(|i| i.0).collect::<Vec<_>>(),
    }));
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    rot_err_deg: f64,
    trans_err: Option<f64>,
    psnr: Option<f64>,
    ssim: Option<f64>,
    lpips: Option<f64>,
    dynamic_score: f64,
    n_regions: usize,
}

fn recorded_frame(settings: &serde_json::Value) -> Option<usize> {
    settings.get("frame")?.as_u64().map(|f| f as usize)
}

fn cmd_eval(dataset: &Path, retrieval: &Path, frame: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let ds = Dataset::load(dataset)?;
    let (c, settings) = io::read_retrieval(retrieval)?;
    let t = frame
        .or_else(|| recorded_frame(&settings))
        .ok_or_else(|| CliError::Usage("no frame recorded; pass --frame".into()))?;
    let gt = ds
        .cameras
        .get(t)
        .ok_or_else(|| CliError::Usage(format!("frame {t} out of range")))?;
    if c.downsample != ds.downsample || c.query.width() != ds.width() || c.query.height() != ds.height() {
        return Err(CliError::Usage("retrieval and dataset resolutions differ".into()));
    }
    let rot = rot_err(&gt.pose.rotation, &c.query.pose.rotation)?;
    let centers: Vec<Vec3> = ds.cameras.iter().map(|c| c.pose.center()).collect();
    let trans = trans_err(gt.pose.center(), c.query.pose.center(), trajectory_length(&centers)).ok();
    let score = score_mosaic(&c.mosaic(), &ds.frames[t].latent, &ds.frames[t].latent_depth)?;
    let report = EvalReport {
        rot_err_deg: rot,
        trans_err: trans,
        psnr: score.psnr,
        ssim: score.ssim,
        lpips: None,
        dynamic_score: dynamic_score(&ds.flows)? as f64,
        n_regions: usize::from(score.psnr.is_some()),
    };
    if !report.rot_err_deg.is_finite() || !report.dynamic_score.is_finite() {
        return Err(CliError::Numeric("non-finite metric".into()));
    }
    print_json(&report);
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
        std::fs::write(&out, text).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

/// Mosaic upsampled by `scale` with uncovered cells in magenta.
fn preview_image(c: &Conditioning, scale: usize) -> Grid<f32> {
    let m = c.mosaic();
    let (h, w) = (m.canvas.height, m.canvas.width);
    let mut img = Grid::filled(h * scale, w * scale, 3, 0.0f32);
    for row in 0..h * scale {
        for col in 0..w * scale {
            let (r, s) = (row / scale, col / scale);
            let px = img.pixel_mut(row, col);
            if m.covered.get(r, s) {
                let v = m.canvas.pixel(r, s);
                for ch in 0..3 {
                    px[ch] = v[ch.min(v.len() - 1)];
                }
            } else {
                px.copy_from_slice(&[1.0, 0.0, 1.0]);
            }
        }
    }
    img
}

fn cmd_preview(retrieval: &Path, out: &Path, scale: Option<usize>) -> Result<()> {
    let (c, _) = io::read_retrieval(retrieval)?;
    let scale = scale.unwrap_or(c.downsample);
    if scale == 0 {
        return Err(CliError::Usage("--scale must be >= 1".into()));
    }
    if c.channels == 0 && !c.patches.is_empty() {
        return Err(CliError::Usage("retrieval has no channels".into()));
    }
    let img = preview_image(&c, scale);
    io::write_ppm(out, &img)?;
    let covered = c.mosaic().covered.count();
    print_json(&json!({ "covered_cells": covered, "width": img.width, "height": img.height }));
    Ok(())
}

fn cmd_ode_demo(
    field: Field,
    method: MethodArg,
    steps: usize,
    dim: usize,
    seed: u64,
    retrieval: Option<PathBuf>,
) -> Result<()> {
    let conditions = match retrieval {
        Some(dir) => Some(io::read_retrieval(&dir)?.0),
        None => None,
    };
    let x0: Vec<f64> = gaussian_init(dim, seed);
    let c = 0.5;
    let u = move |x: &[f64], _l: f64, _c: &Option<Conditioning>| -> Vec<f64> {
        match field {
            Field::Zero => vec![0.0; x.len()],
            Field::Constant => vec![c; x.len()],
            Field::Linear => x.to_vec(),
        }
    };
    let method = match method {
        MethodArg::Euler => Method::Euler,
        MethodArg::Heun => Method::Heun,
    };
    let x1 = integrate(&u, &x0, &conditions, steps, method)?;
    let exact: Vec<f64> = x0
        .iter()
        .map(|x| match field {
            Field::Zero => *x,
            Field::Constant => x + c,
            Field::Linear => x * std::f64::consts::E,
        })
        .collect();
    let err = x1
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
        .fold(0.0, f64::max);
    print_json(&json!({
        "steps": steps,
        "x0": x0,
        "x1": x1,
        "analytic": exact,
        "max_rel_err": err,
        "conditioning_patches": conditions.as_ref().map(|c| c.patches.len()),
    }));
    Ok(())
}

fn cmd_inspect(file: &Path) -> Result<()> {
    let t = Tensor::read(file)?;
    let dtype = match t.data {
        TensorData::F32(_) => "f32",
        TensorData::F64(_) => "f64",
        TensorData::U8(_) => "u8",
    };
    print_json(&json!({ "dtype": dtype, "dims": t.dims, "elements": t.element_count() }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { spec, out } => cmd_simulate(&spec, &out),
        Command::Lift {
            dataset,
            out,
            patch_size,
            frames,
        } => cmd_lift(&dataset, &out, patch_size, frames),
        Command::Retrieve(a) => cmd_retrieve(&a),
        Command::Mem(m) => cmd_mem(m),
        Command::Eval {
            dataset,
            retrieval,
            frame,
            out,
        } => cmd_eval(&dataset, &retrieval, frame, out),
        Command::Preview { retrieval, out, scale } => cmd_preview(&retrieval, &out, scale),
        Command::OdeDemo {
            field,
            method,
            steps,
            dim,
            seed,
            retrieval,
        } => cmd_ode_demo(field, method, steps, dim, seed, retrieval),
        Command::Inspect { file } => cmd_inspect(&file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mosaicmem: {e}");
            ExitCode::from(e.code())
        }
    }
}
