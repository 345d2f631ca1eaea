//! `hsr`: scene synthesis, training, rendering, meshing and evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, ExitKind};

#[derive(Parser, Debug)]
#[command(name = "hsr", version, about = "Neural surface reconstruction through reflective glass")]
struct Cli {
    /// Worker threads for image-level parallelism (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an analytic toy scene (images, cameras.json, mesh.obj)
    Toy(ToyArgs),
    /// Composite a reflection scene onto a transmission scene
    Synth(SynthArgs),
    /// Train the fields on a scene directory
    Train(TrainArgs),
    /// Render a view: fused colour, per-path colours, plane depth and normal maps
    Render(RenderArgs),
    /// Extract the zero level set of a trained SDF
    Mesh(MeshArgs),
    /// Compare meshes (Chamfer) or image directories (PSNR, SSIM)
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    /// Shape of the object
    #[arg(long, value_parser = ["sphere", "box"], default_value = "sphere")]
    pub shape: String,
    /// Sphere radius or box half extent
    #[arg(long, default_value_t = 0.5)]
    pub size: f64,
    #[arg(long, default_value_t = 20)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Albedo pattern seed
    #[arg(long, env = "HSR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Multiplier on the shaded colour
    #[arg(long, default_value_t = 1.0)]
    pub brightness: f64,
    /// Rotation of the camera ring about the vertical axis, in degrees
    #[arg(long, default_value_t = 0.0)]
    pub azimuth: f64,
    /// Output scene directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Transmission scene directory, or `toy_sphere` / `toy_box`
    #[arg(long = "t")]
    pub transmission: String,
    /// Reflection scene directory, or `toy_sphere` / `toy_box`
    #[arg(long = "r")]
    pub reflection: String,
    /// Odd Gaussian kernel size applied to the reflection layer
    #[arg(long, default_value_t = 11)]
    pub kernel: usize,
    /// Kernel standard deviation [default: (kernel - 1) / 6]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Views and resolution of generated toy inputs
    #[arg(long, default_value_t = 20)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Seed for generated toy inputs
    #[arg(long, env = "HSR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output scene directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Scene directory with cameras.json
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory for checkpoint.bin, train.log, config.ini and renders
    #[arg(long)]
    pub out: PathBuf,
    /// Configuration file ([train], [fields], [sampling], [plane] sections)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting preset: paper, desk or micro
    #[arg(long, default_value = "paper")]
    pub preset: String,
    /// Continue from the checkpoint in --out
    #[arg(long)]
    pub resume: bool,
    /// Rays per batch [preset default: 512]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training iterations [preset default: 200000; desk 20000]
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Weight of the eikonal and plane-normal terms [default: 0.1]
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Object-path fusion ratio [default: 0.3]
    #[arg(long)]
    pub phi1: Option<f64>,
    /// Plane-path fusion ratio [default: 0.7]
    #[arg(long)]
    pub phi2: Option<f64>,
    /// Peak learning rate [default: 5e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Run seed [default: 0]
    #[arg(long, env = "HSR_SEED")]
    pub seed: Option<u64>,
    /// Log every N steps [default: 100]
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Drop the plane path (object path only)
    #[arg(long)]
    pub no_plane: bool,
    /// Drop the plane attribute branch (no reflection, SDF normals)
    #[arg(long)]
    pub no_attributes: bool,
    /// Drop the plane density branch (plane path reuses object weights)
    #[arg(long)]
    pub no_density: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Scene directory supplying the cameras
    #[arg(long)]
    pub scene: PathBuf,
    /// Trained checkpoint; omitted renders freshly initialized fields
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// View indices, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub views: Vec<usize>,
    /// Preset for freshly initialized fields
    #[arg(long, default_value = "paper")]
    pub preset: String,
    /// Initialization seed when no checkpoint is given
    #[arg(long, env = "HSR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MeshArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Grid cells per axis over [-1, 1]^3
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Iso level
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    /// Output mesh, .obj or .ply
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Reconstructed mesh (.obj or .ply)
    #[arg(long, requires = "gt_mesh", conflicts_with_all = ["images", "reference"])]
    pub mesh: Option<PathBuf>,
    /// Ground-truth mesh
    #[arg(long)]
    pub gt_mesh: Option<PathBuf>,
    /// Points sampled per mesh
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Surface sampling seed
    #[arg(long, env = "HSR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Directory of rendered images
    #[arg(long, requires = "reference")]
    pub images: Option<PathBuf>,
    /// Directory of reference images with matching file names
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Also write the report to this file
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ExitKind::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("cannot size thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Toy(a) => commands::toy(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Render(a) => commands::render(&a),
        Command::Mesh(a) => commands::mesh(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { kind, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(kind as u8)
        }
    }
}
