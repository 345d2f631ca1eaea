//! Training: ray batches, the colour/eikonal/plane-normal losses, Adam
//! steps, checkpoints and the progress log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hsr_autodiff::{AdamConfig, AdamState, Checkpoint, LrSchedule, Real, Tape, Tensor, Var};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::SceneDataset;
use crate::error::{HsrError, Result};
use crate::fields::{FieldConfig, FieldSet, PlaneOptions};
use crate::geometry::{generate_rays, Camera, Ray};
use crate::mesh::{marching_cubes, GridBounds, TriangleMesh};
use crate::raster::Image;
use crate::renderer::{render_batch, render_image, sample_hierarchical, RenderOptions, SamplingConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train.log";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub lambda1: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub seed: u64,
    pub lr: f64,
    pub lr_floor: f64,
    pub warmup_fraction: f64,
    /// Log every this many steps.
    pub log_every: u64,
    /// Checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Render view 0 every this many steps; 0 disables.
    pub validate_every: u64,
    pub sphere_radius: f64,
    pub fields: FieldConfig,
    pub plane: PlaneOptions,
    pub sampling: SamplingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            iterations: 200_000,
            lambda1: 0.1,
            phi1: 0.3,
            phi2: 0.7,
            seed: 0,
            lr: 5e-4,
            lr_floor: 2.5e-5,
            warmup_fraction: 0.02,
            log_every: 100,
            checkpoint_every: 20_000,
            validate_every: 20_000,
            sphere_radius: 1.0,
            fields: FieldConfig::default(),
            plane: PlaneOptions::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

/// Named presets selectable from the command line and config files.
pub const PRESETS: [&str; 3] = ["paper", "desk", "micro"];

impl TrainConfig {
    /// Width-64 networks, 20k iterations.
    pub fn desk() -> Self {
        Self {
            iterations: 20_000,
            checkpoint_every: 2_000,
            validate_every: 2_000,
            fields: FieldConfig::desk(),
            ..Self::default()
        }
    }

    /// Small enough for a single CPU core in minutes: width-32 networks,
    /// 128-ray batches and 32 + 2×16 samples per ray.
    pub fn micro() -> Self {
        Self {
            batch_size: 128,
            iterations: 2_000,
            lr: 1e-3,
            log_every: 50,
            checkpoint_every: 0,
            validate_every: 0,
            fields: FieldConfig {
                sdf_width: 32,
                feature_width: 32,
                plane_width: 32,
                color_width: 32,
                ..FieldConfig::default()
            },
            sampling: SamplingConfig {
                coarse: 32,
                rounds: 2,
                per_round: 16,
                base_sharpness: 32.0,
            },
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            "micro" => Ok(Self::micro()),
            other => Err(HsrError::InvalidConfig(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HsrError::InvalidConfig(msg));
        if (self.phi1 + self.phi2 - 1.0).abs() > 1e-9 {
            return bad(format!(
                "phi1 + phi2 must equal 1, got {} + {} = {}",
                self.phi1,
                self.phi2,
                self.phi1 + self.phi2
            ));
        }
        if self.phi1 < 0.0 || self.phi2 < 0.0 {
            return bad("fusion ratios must be nonnegative".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lambda1 >= 0.0) {
            return bad(format!("lambda1 must be nonnegative, got {}", self.lambda1));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr_floor >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.sampling.coarse < 2 {
            return bad("need at least 2 coarse samples".into());
        }
        if !(self.sphere_radius > 0.0) {
            return bad("sphere radius must be positive".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr as Real,
            floor: self.lr_floor as Real,
            warmup_fraction: self.warmup_fraction as Real,
            total_steps: self.iterations,
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            sampling: self.sampling,
            phi: (self.phi1, self.phi2),
            sphere_radius: self.sphere_radius,
            chunk: 1024,
        }
    }

    /// Every setting as `section.key = value`.
    pub fn entries(&self) -> Vec<(String, String)> {
        let f = &self.fields;
        let s = &self.sampling;
        let p = &self.plane;
        [
            ("train.batch_size", self.batch_size.to_string()),
            ("train.iterations", self.iterations.to_string()),
            ("train.lambda1", self.lambda1.to_string()),
            ("train.phi1", self.phi1.to_string()),
            ("train.phi2", self.phi2.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.lr_floor", self.lr_floor.to_string()),
            ("train.warmup_fraction", self.warmup_fraction.to_string()),
            ("train.log_every", self.log_every.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.validate_every", self.validate_every.to_string()),
            ("train.sphere_radius", self.sphere_radius.to_string()),
            ("fields.sdf_width", f.sdf_width.to_string()),
            ("fields.feature_width", f.feature_width.to_string()),
            ("fields.plane_width", f.plane_width.to_string()),
            ("fields.color_width", f.color_width.to_string()),
            ("fields.point_frequencies", f.point_frequencies.to_string()),
            ("fields.direction_frequencies", f.direction_frequencies.to_string()),
            ("fields.depth_frequencies", f.depth_frequencies.to_string()),
            ("fields.softplus_beta", f.softplus_beta.to_string()),
            ("fields.init_radius", f.init_radius.to_string()),
            ("fields.init_sharpness", f.init_sharpness.to_string()),
            ("sampling.coarse", s.coarse.to_string()),
            ("sampling.rounds", s.rounds.to_string()),
            ("sampling.per_round", s.per_round.to_string()),
            ("sampling.base_sharpness", s.base_sharpness.to_string()),
            ("plane.enabled", p.enabled.to_string()),
            ("plane.attributes", p.attributes.to_string()),
            ("plane.density", p.density.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sets one `section.key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| HsrError::InvalidConfig(format!("cannot parse {key} = {value:?}")))
        }
        let v = value;
        match key {
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.iterations" => self.iterations = parse(key, v)?,
            "train.lambda1" => self.lambda1 = parse(key, v)?,
            "train.phi1" => self.phi1 = parse(key, v)?,
            "train.phi2" => self.phi2 = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.lr_floor" => self.lr_floor = parse(key, v)?,
            "train.warmup_fraction" => self.warmup_fraction = parse(key, v)?,
            "train.log_every" => self.log_every = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "train.validate_every" => self.validate_every = parse(key, v)?,
            "train.sphere_radius" => self.sphere_radius = parse(key, v)?,
            "fields.sdf_width" => self.fields.sdf_width = parse(key, v)?,
            "fields.feature_width" => self.fields.feature_width = parse(key, v)?,
            "fields.plane_width" => self.fields.plane_width = parse(key, v)?,
            "fields.color_width" => self.fields.color_width = parse(key, v)?,
            "fields.point_frequencies" => self.fields.point_frequencies = parse(key, v)?,
            "fields.direction_frequencies" => self.fields.direction_frequencies = parse(key, v)?,
            "fields.depth_frequencies" => self.fields.depth_frequencies = parse(key, v)?,
            "fields.softplus_beta" => self.fields.softplus_beta = parse(key, v)?,
            "fields.init_radius" => self.fields.init_radius = parse(key, v)?,
            "fields.init_sharpness" => self.fields.init_sharpness = parse(key, v)?,
            "sampling.coarse" => self.sampling.coarse = parse(key, v)?,
            "sampling.rounds" => self.sampling.rounds = parse(key, v)?,
            "sampling.per_round" => self.sampling.per_round = parse(key, v)?,
            "sampling.base_sharpness" => self.sampling.base_sharpness = parse(key, v)?,
            "plane.enabled" => self.plane.enabled = parse(key, v)?,
            "plane.attributes" => self.plane.attributes = parse(key, v)?,
            "plane.density" => self.plane.density = parse(key, v)?,
            other => return Err(HsrError::InvalidConfig(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies an INI-style text: `[section]` headers, `key = value` lines,
    /// `#` or `;` comments. A `preset` key in `[train]` (or before any
    /// section) resets to that preset before the remaining keys apply.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::from("train");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HsrError::InvalidConfig(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            let key = key.trim();
            if key == "preset" && section == "train" {
                *self = Self::preset(value.trim())?;
                continue;
            }
            self.set(&format!("{section}.{key}"), value)
                .map_err(|e| HsrError::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = Self::default();
        config.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(config)
    }

    /// Renders the config in the format read by [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, value) in self.entries() {
            let (section, name) = key.split_once('.').expect("sectioned key");
            if section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = match section {
                    "train" => "train",
                    "fields" => "fields",
                    "sampling" => "sampling",
                    _ => "plane",
                };
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }

    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in meta {
            if k.contains('.') {
                config.set(k, v)?;
            }
        }
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub color: f64,
    pub eikonal: f64,
    pub normal: f64,
    pub total: f64,
}

/// Mean absolute error over rays and channels.
pub fn color_loss(rendered: &[[f64; 3]], captured: &[[f64; 3]]) -> Result<f64> {
    if rendered.len() != captured.len() {
        return Err(HsrError::CountMismatch {
            what: "color",
            left: rendered.len(),
            right: captured.len(),
        });
    }
    let sum: f64 = rendered
        .iter()
        .zip(captured)
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
        .sum();
    Ok(sum / (3 * rendered.len().max(1)) as f64)
}

/// Mean of `(‖v‖ - 1)²`; used for SDF gradients and raw plane normals alike.
pub fn unit_norm_penalty(vectors: &[[f64; 3]]) -> f64 {
    let sum: f64 = vectors
        .iter()
        .map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).powi(2))
        .sum();
    sum / vectors.len().max(1) as f64
}

pub fn eikonal_loss(gradients: &[[f64; 3]]) -> f64 {
    unit_norm_penalty(gradients)
}

pub fn plane_normal_loss(normals: &[[f64; 3]]) -> f64 {
    unit_norm_penalty(normals)
}

fn unit_norm_penalty_graph(v: Var<'_>) -> Result<Var<'_>> {
    Ok(v.square().sum_axis(1)?.sqrt().offset(-1.0).square().mean())
}

/// Per-step generator derived from the run seed, so that a resumed run
/// replays the same batches.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Differentiable loss of one batch.
pub struct BatchLoss<'t> {
    pub total: Var<'t>,
    pub breakdown: LossBreakdown,
}

/// Pixels drawn for one step. Rays that miss the bounding sphere see only
/// the background colour.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub targets: Vec<[f64; 3]>,
    pub missed: Vec<[f64; 3]>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len() + self.missed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn colors_tensor(colors: &[[f64; 3]]) -> Result<Tensor> {
    Ok(Tensor::new(
        vec![colors.len(), 3],
        colors.iter().flatten().map(|&v| v as Real).collect(),
    )?)
}

/// Builds `L_c + λ1 (L_r + L_n)` for a batch; `samples` pairs with
/// `batch.rays`.
pub fn batch_loss<'t>(
    fields: &FieldSet,
    vars: &hsr_autodiff::Bindings<'t>,
    tape: &'t Tape,
    batch: &RayBatch,
    samples: &[crate::renderer::RaySamples],
    config: &TrainConfig,
) -> Result<BatchLoss<'t>> {
    if batch.is_empty() {
        return Err(HsrError::InvalidConfig("empty ray batch".into()));
    }
    let mut abs_sum = tape.scalar(0.0);
    let mut eikonal = tape.scalar(0.0);
    let mut normal = tape.scalar(0.0);
    if !batch.rays.is_empty() {
        let out = render_batch(fields, vars, tape, &batch.rays, samples, (config.phi1, config.phi2))?;
        let target = tape.constant(colors_tensor(&batch.targets)?);
        abs_sum = out.color.sub(target)?.abs().sum();
        eikonal = unit_norm_penalty_graph(out.sdf_gradient)?;
        if let Some(raw) = out.plane_normal_raw {
            normal = unit_norm_penalty_graph(raw)?;
        }
    }
    if !batch.missed.is_empty() {
        let background = vars[fields.background]
            .sigmoid()
            .reshape(&[1, 3])?
            .broadcast_to(&[batch.missed.len(), 3])?;
        let target = tape.constant(colors_tensor(&batch.missed)?);
        abs_sum = abs_sum.add(background.sub(target)?.abs().sum())?;
    }
    let color = abs_sum.scale(1.0 / (3 * batch.len()) as Real);
    let total = color.add(eikonal.add(normal)?.scale(config.lambda1 as Real))?;
    Ok(BatchLoss {
        total,
        breakdown: LossBreakdown {
            color: color.item() as f64,
            eikonal: eikonal.item() as f64,
            normal: normal.item() as f64,
            total: total.item() as f64,
        },
    })
}

/// Mean colour of the pixels whose rays miss the bounding sphere, used to
/// start the background near its observed value. Without it the surface
/// tends to swell over background pixels before the background catches up.
fn missed_pixel_mean(dataset: &SceneDataset, cameras: &[Camera], radius: f64) -> Result<Option<[f64; 3]>> {
    let (w, h) = dataset.resolution();
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    let (mut sum, mut count) = ([0.0; 3], 0usize);
    for (view, camera) in dataset.views.iter().zip(cameras) {
        for (ray, &(x, y)) in generate_rays(camera, &pixels, radius)?.iter().zip(&pixels) {
            if ray.is_none() {
                let c = view.image.pixel(x, y);
                (0..3).for_each(|k| sum[k] += c[k]);
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| sum.map(|v| v / count as f64)))
}

pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub fields: FieldSet,
    pub adam: AdamState,
    pub step: u64,
    dataset: &'d SceneDataset,
    cameras: Vec<Camera>,
}

impl<'d> Trainer<'d> {
    pub fn new(dataset: &'d SceneDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(HsrError::InvalidConfig("dataset has no views".into()));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fields = FieldSet::new(config.fields.clone(), config.plane, &mut init_rng)?;
        let cameras: Vec<Camera> = (0..dataset.len()).map(|i| dataset.normalized_camera(i)).collect();
        if let Some(mean) = missed_pixel_mean(dataset, &cameras, config.sphere_radius)? {
            let logits = fields.params.value_mut(fields.background).data_mut();
            for (l, c) in logits.iter_mut().zip(mean) {
                let c = c.clamp(0.01, 0.99);
                *l = (c / (1.0 - c)).ln() as _;
            }
        }
        let adam = AdamState::new(&fields.params, AdamConfig::default());
        Ok(Self {
            cameras,
            config,
            fields,
            adam,
            step: 0,
            dataset,
        })
    }

    /// Restores parameters, optimizer state and step from a checkpoint; the
    /// configuration is read from its metadata.
    pub fn resume(dataset: &'d SceneDataset, checkpoint: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_metadata(&checkpoint.metadata)?;
        Self::resume_with(dataset, checkpoint, config)
    }

    /// Like [`Self::resume`] with an explicit configuration, e.g. one with a
    /// larger iteration count. Network shapes must match the checkpoint.
    pub fn resume_with(dataset: &'d SceneDataset, checkpoint: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut trainer = Self::new(dataset, config)?;
        trainer.fields.params.load_values(&checkpoint.params)?;
        if let Some(adam) = &checkpoint.adam {
            trainer.adam = adam.clone();
        }
        trainer.step = checkpoint.step;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            metadata: self.config.entries().into_iter().collect(),
            params: self.fields.params.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    /// Draws `batch_size` pixels, each from a uniformly chosen view.
    pub fn draw_batch(&self, rng: &mut ChaCha8Rng) -> Result<RayBatch> {
        let (w, h) = self.dataset.resolution();
        let mut batch = RayBatch::default();
        for _ in 0..self.config.batch_size {
            let view = rng.random_range(0..self.cameras.len());
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            let color = self.dataset.views[view].image.pixel(x, y);
            match generate_rays(&self.cameras[view], &[(x, y)], self.config.sphere_radius)?[0] {
                Some(ray) => {
                    batch.rays.push(ray);
                    batch.targets.push(color);
                }
                None => batch.missed.push(color),
            }
        }
        Ok(batch)
    }

    /// One optimization step on a fresh batch.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let mut rng = step_rng(self.config.seed, self.step);
        let batch = self.draw_batch(&mut rng)?;
        let samples = sample_hierarchical(&self.fields, &batch.rays, &self.config.sampling, Some(&mut rng))?;
        let tape = Tape::new();
        let vars = self.fields.params.bind(&tape);
        let loss = batch_loss(&self.fields, &vars, &tape, &batch, &samples, &self.config)?;
        let b = loss.breakdown;
        if ![b.color, b.eikonal, b.normal, b.total].iter().all(|v| v.is_finite()) {
            return Err(HsrError::NonFiniteLoss {
                step: self.step,
                color: b.color,
                eikonal: b.eikonal,
                normal: b.normal,
            });
        }
        tape.backward(loss.total)?;
        self.fields.params.accumulate_grads(&vars);
        drop(vars);
        drop(tape);
        let lr = self.config.schedule().at(self.step);
        self.adam.step(&mut self.fields.params, lr)?;
        self.step += 1;
        Ok(b)
    }

    /// Renders view `index` of the training set with the current fields.
    pub fn render_view(&self, index: usize) -> Result<crate::renderer::RenderedImage> {
        render_image(&self.fields, &self.cameras[index], &self.config.render_options())
    }
}

/// One progress-log line.
pub fn format_log_line(step: u64, loss: &LossBreakdown, sharpness: f64, elapsed: f64, with_normal: bool) -> String {
    let mut line = format!("step {step} color {:.6} eikonal {:.6}", loss.color, loss.eikonal);
    if with_normal {
        let _ = write!(line, " normal {:.6}", loss.normal);
    }
    let _ = write!(line, " total {:.6} s {:.4} time {elapsed:.2}", loss.total, sharpness);
    line
}

/// Runs the step loop from `trainer.step` to the configured iteration
/// count, appending to `out_dir/train.log` and writing checkpoints and
/// validation renders along the way. Returns the final checkpoint path.
pub fn train(trainer: &mut Trainer<'_>, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let config = trainer.config.clone();
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join(LOG_FILE))?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let with_normal = config.plane.uses_attributes();
    let start = Instant::now();
    while trainer.step < config.iterations {
        let loss = trainer.train_step()?;
        let step = trainer.step;
        if step % config.log_every.max(1) == 0 || step == config.iterations {
            let line = format_log_line(step, &loss, trainer.fields.sharpness(), start.elapsed().as_secs_f64(), with_normal);
            info!("{line}");
            writeln!(log, "{line}")?;
        }
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step < config.iterations {
            trainer.checkpoint().save(&checkpoint_path)?;
        }
        if config.validate_every > 0 && step % config.validate_every == 0 {
            let render = trainer.render_view(0)?;
            let image = Image::from_pixels(render.width, render.height, &render.color)?;
            image.save(&out_dir.join("validation").join(format!("step_{step:07}.png")))?;
        }
    }
    trainer.checkpoint().save(&checkpoint_path)?;
    Ok(checkpoint_path)
}

/// Rebuilds the fields and configuration stored in a checkpoint file.
pub fn load_fields(path: &Path) -> Result<(FieldSet, TrainConfig, u64)> {
    let checkpoint = Checkpoint::load(path)?;
    let config = TrainConfig::from_metadata(&checkpoint.metadata)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fields = FieldSet::new(config.fields.clone(), config.plane, &mut rng)?;
    fields.params.load_values(&checkpoint.params)?;
    Ok((fields, config, checkpoint.step))
}

/// Zero level set of the SDF over `[-1, 1]^3`.
pub fn extract_mesh(fields: &FieldSet, resolution: usize) -> Result<TriangleMesh> {
    marching_cubes(|p| fields.sdf_values(p), resolution, 0.0, GridBounds::default())
}
