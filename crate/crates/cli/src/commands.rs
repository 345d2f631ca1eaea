use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hsr_autodiff::{AutodiffError, Checkpoint};
use hsr_core::dataset::{
    make_toy_scene, save_toy_scene, synthesize_scene, SceneDataset, SynthesisSpec, ToyScene, ToySceneSpec,
    ToyShape,
};
use hsr_core::fields::FieldSet;
use hsr_core::mesh::{chamfer_distance, read_mesh, write_mesh};
use hsr_core::metrics::{psnr, ssim};
use hsr_core::raster::Image;
use hsr_core::renderer::render_image;
use hsr_core::trainer::{extract_mesh, load_fields, train as run_training, TrainConfig, Trainer, CHECKPOINT_FILE};
use hsr_core::{write_atomic, HsrError};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{EvalArgs, MeshArgs, RenderArgs, SynthArgs, ToyArgs, TrainArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }
}

impl From<HsrError> for CliError {
    fn from(e: HsrError) -> Self {
        let kind = match &e {
            HsrError::InvalidConfig(_) => ExitKind::Usage,
            HsrError::NonFiniteLoss { .. } => ExitKind::Numeric,
            HsrError::Autodiff(inner) => autodiff_kind(inner),
            _ => ExitKind::Data,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        Self {
            kind: autodiff_kind(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        HsrError::Io(e).into()
    }
}

fn autodiff_kind(e: &AutodiffError) -> ExitKind {
    match e {
        AutodiffError::Io(_)
        | AutodiffError::Checkpoint(_)
        | AutodiffError::UnknownParam(_)
        | AutodiffError::DuplicateParam(_) => ExitKind::Data,
        _ => ExitKind::Numeric,
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Prefixes an error with the file it concerns.
fn at_path<T, E: Into<CliError>>(path: &Path, r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| {
        let mut e = e.into();
        e.message = format!("{}: {}", path.display(), e.message);
        e
    })
}

fn toy_spec(shape: &str, size: f64) -> CliResult<ToyShape> {
    match shape {
        "sphere" => Ok(ToyShape::Sphere { radius: size }),
        "box" => Ok(ToyShape::Box { half_extent: size }),
        other => Err(CliError::usage(format!("unknown shape {other:?}"))),
    }
}

pub fn toy(a: &ToyArgs) -> CliResult {
    if !(a.size > 0.0 && a.size < 1.0) {
        return Err(CliError::usage(format!("size must lie in (0, 1), got {}", a.size)));
    }
    let spec = ToySceneSpec {
        shape: toy_spec(&a.shape, a.size)?,
        views: a.views,
        width: a.width,
        height: a.height,
        seed: a.seed,
        brightness: a.brightness,
        azimuth_offset: a.azimuth.to_radians(),
        ..ToySceneSpec::default()
    };
    let scene = make_toy_scene(&spec)?;
    let mesh = save_toy_scene(&scene, &a.out)?;
    println!("scene: {}\nmesh: {}", a.out.display(), mesh.display());
    Ok(())
}

/// Built-in reflection-free scenes usable in place of a directory.
fn builtin_toy(name: &str, views: usize, size: usize, seed: u64) -> Option<ToySceneSpec> {
    let base = ToySceneSpec {
        views,
        width: size,
        height: size,
        seed,
        ..ToySceneSpec::default()
    };
    match name {
        "toy_sphere" => Some(base),
        "toy_box" => Some(ToySceneSpec {
            shape: ToyShape::Box { half_extent: 0.35 },
            seed: seed.wrapping_add(1),
            brightness: 0.6,
            background: [0.0; 3],
            azimuth_offset: std::f64::consts::PI,
            ..base
        }),
        _ => None,
    }
}

fn scene_source(name: &str, views: usize, size: usize, seed: u64) -> CliResult<SceneDataset> {
    let path = Path::new(name);
    if !path.exists() {
        if let Some(spec) = builtin_toy(name, views, size, seed) {
            let ToyScene { dataset, .. } = make_toy_scene(&spec)?;
            return Ok(dataset);
        }
    }
    Ok(SceneDataset::load(path)?)
}

pub fn synth(a: &SynthArgs) -> CliResult {
    let spec = SynthesisSpec {
        kernel_size: a.kernel,
        sigma: a.sigma,
    };
    spec.validate()?;
    let transmission = scene_source(&a.transmission, a.views, a.size, a.seed)?;
    let reflection = scene_source(&a.reflection, a.views, a.size, a.seed)?;
    let scene = synthesize_scene(&transmission, &reflection, &spec)?;
    scene.save(&a.out)?;
    let mesh = Path::new(&a.transmission).join("mesh.obj");
    if mesh.is_file() {
        std::fs::copy(&mesh, a.out.join("mesh.obj"))?;
    } else if let Some(spec) = builtin_toy(&a.transmission, a.views, a.size, a.seed) {
        write_mesh(&spec.shape.mesh(), &a.out.join("mesh.obj"))?;
    }
    println!("scene: {} ({} views)", a.out.display(), scene.len());
    Ok(())
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config = TrainConfig::preset(&a.preset)?;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    apply_overrides(&mut config, a);
    Ok(config)
}

fn apply_overrides(config: &mut TrainConfig, a: &TrainArgs) {
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.iterations {
        config.iterations = v;
    }
    if let Some(v) = a.lambda1 {
        config.lambda1 = v;
    }
    if let Some(v) = a.phi1 {
        config.phi1 = v;
    }
    if let Some(v) = a.phi2 {
        config.phi2 = v;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.log_every {
        config.log_every = v;
    }
    if a.no_plane {
        config.plane.enabled = false;
    }
    if a.no_attributes {
        config.plane.attributes = false;
    }
    if a.no_density {
        config.plane.density = false;
    }
}

pub fn train(a: &TrainArgs) -> CliResult {
    let checkpoint_path = a.out.join(CHECKPOINT_FILE);
    let resumed = if a.resume {
        if !checkpoint_path.is_file() {
            return Err(CliError::usage(format!(
                "--resume given but {} does not exist",
                checkpoint_path.display()
            )));
        }
        Some(at_path(&checkpoint_path, Checkpoint::load(&checkpoint_path))?)
    } else {
        None
    };
    let config = match &resumed {
        Some(ck) => {
            let mut config = TrainConfig::from_metadata(&ck.metadata)?;
            apply_overrides(&mut config, a);
            config
        }
        None => train_config(a)?,
    };
    config.validate()?;
    let dataset = SceneDataset::load(&a.scene)?;
    let mut trainer = match &resumed {
        Some(ck) => Trainer::resume_with(&dataset, ck, config.clone())?,
        None => Trainer::new(&dataset, config.clone())?,
    };
    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("config.ini"), config.to_text().as_bytes())?;
    info!(
        "training {} views at {:?} from step {} to {}",
        dataset.len(),
        dataset.resolution(),
        trainer.step,
        config.iterations
    );
    let path = run_training(&mut trainer, &a.out)?;
    println!("checkpoint: {}", path.display());
    Ok(())
}

fn encode_unit(v: f64) -> f64 {
    0.5 * (v + 1.0)
}

pub fn render(a: &RenderArgs) -> CliResult {
    let dataset = SceneDataset::load(&a.scene)?;
    if let Some(&bad) = a.views.iter().find(|&&v| v >= dataset.len()) {
        return Err(CliError::usage(format!(
            "view {bad} out of range; the scene has {} views",
            dataset.len()
        )));
    }
    let (fields, config): (FieldSet, TrainConfig) = match &a.checkpoint {
        Some(path) => {
            let (fields, config, _) = at_path(path, load_fields(path))?;
            (fields, config)
        }
        None => {
            let mut config = TrainConfig::preset(&a.preset)?;
            config.seed = a.seed;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (FieldSet::new(config.fields.clone(), config.plane, &mut rng)?, config)
        }
    };
    std::fs::create_dir_all(&a.out)?;
    let options = config.render_options();
    for &view in &a.views {
        let r = render_image(&fields, &dataset.normalized_camera(view), &options)?;
        let (w, h) = (r.width, r.height);
        let save = |suffix: &str, img: Image| -> CliResult<PathBuf> {
            let path = a.out.join(format!("view_{view:03}_{suffix}.png"));
            img.save(&path)?;
            Ok(path)
        };
        save("color", Image::from_pixels(w, h, &r.color)?)?;
        save("object", Image::from_pixels(w, h, &r.object)?)?;
        if config.plane.enabled {
            save("plane", Image::from_pixels(w, h, &r.plane)?)?;
            save("plane_depth", Image::from_gray(w, h, &r.plane_depth)?)?;
            let normals: Vec<[f64; 3]> = r.plane_normal.iter().map(|n| n.map(encode_unit)).collect();
            save("plane_normal", Image::from_pixels(w, h, &normals)?)?;
        }
        println!("rendered view {view}");
    }
    Ok(())
}

pub fn mesh(a: &MeshArgs) -> CliResult {
    if a.resolution < 2 {
        return Err(CliError::usage("resolution must be at least 2"));
    }
    let (fields, _, step) = at_path(&a.checkpoint, load_fields(&a.checkpoint))?;
    let mut mesh = if a.threshold == 0.0 {
        extract_mesh(&fields, a.resolution)?
    } else {
        hsr_core::mesh::marching_cubes(
            |p| fields.sdf_values(p),
            a.resolution,
            a.threshold,
            hsr_core::mesh::GridBounds::default(),
        )?
    };
    mesh.cleanup();
    write_mesh(&mesh, &a.out)?;
    println!(
        "mesh: {} (step {step}, {} vertices, {} triangles)",
        a.out.display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(())
}

fn png_names(dir: &Path) -> CliResult<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let mut report = String::new();
    match (&a.mesh, &a.gt_mesh, &a.images, &a.reference) {
        (Some(mesh), Some(gt), None, None) => {
            if a.samples == 0 {
                return Err(CliError::usage("samples must be positive"));
            }
            let (m, g) = (at_path(mesh, read_mesh(mesh))?, at_path(gt, read_mesh(gt))?);
            // same stream for both, so identical meshes give identical samples
            let pm = m.sample_surface(a.samples, &mut ChaCha8Rng::seed_from_u64(a.seed));
            let pg = g.sample_surface(a.samples, &mut ChaCha8Rng::seed_from_u64(a.seed));
            let cd = chamfer_distance(&pm, &pg)?;
            let _ = writeln!(report, "chamfer: {cd}");
            let _ = writeln!(report, "samples: {}", a.samples);
        }
        (None, None, Some(images), Some(reference)) => {
            let names = png_names(reference)?;
            let (mut total_psnr, mut total_ssim, mut count) = (0.0, 0.0, 0usize);
            for name in names {
                let rendered = images.join(&name);
                if !rendered.is_file() {
                    continue;
                }
                let (x, y) = (Image::load(&rendered)?, Image::load(&reference.join(&name))?);
                let (p, s) = (psnr(&x, &y)?, ssim(&x, &y)?);
                let _ = writeln!(report, "{name}.psnr: {p:.4}");
                let _ = writeln!(report, "{name}.ssim: {s:.6}");
                total_psnr += p;
                total_ssim += s;
                count += 1;
            }
            if count == 0 {
                return Err(HsrError::InvalidConfig("no image names in common".into()).into());
            }
            let _ = writeln!(report, "images: {count}");
            let _ = writeln!(report, "psnr: {:.4}", total_psnr / count as f64);
            let _ = writeln!(report, "ssim: {:.6}", total_ssim / count as f64);
        }
        _ => {
            return Err(CliError::usage(
                "give either --mesh with --gt-mesh, or --images with --reference",
            ))
        }
    }
    print!("{report}");
    if let Some(path) = &a.report {
        write_atomic(path, report.as_bytes())?;
    }
    Ok(())
}
