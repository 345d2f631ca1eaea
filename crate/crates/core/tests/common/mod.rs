//! Fixtures shared by integration tests and the acceptance run.
#![allow(dead_code)]

use hsr_autodiff::Tape;
use hsr_core::fields::{FieldConfig, FieldSet, PlaneOptions};
use hsr_core::geometry::{sphere_clip, Ray, Vec3};
use hsr_core::renderer::{stratified_depths, RaySamples};
use hsr_core::trainer::{batch_loss, RayBatch, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two rays, eight samples each, width-8 networks.
pub struct MicroScene {
    pub fields: FieldSet,
    pub batch: RayBatch,
    pub samples: Vec<RaySamples>,
    pub config: TrainConfig,
}

pub fn micro_scene(options: PlaneOptions, seed: u64) -> MicroScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = TrainConfig::micro();
    config.fields = FieldConfig {
        sdf_width: 8,
        feature_width: 8,
        plane_width: 8,
        color_width: 8,
        point_frequencies: 2,
        direction_frequencies: 2,
        depth_frequencies: 2,
        ..FieldConfig::default()
    };
    config.plane = options;
    let fields = FieldSet::new(config.fields.clone(), options, &mut rng).unwrap();
    let origin = Vec3::new(0.2, -0.1, -1.8);
    let mut batch = RayBatch::default();
    let mut samples = Vec::new();
    for k in 0..2 {
        let direction = Vec3::new(0.05 + 0.1 * k as f64, -0.08 * k as f64, 1.0).normalize();
        let (near, far) = sphere_clip(&origin, &direction, 1.0).unwrap();
        batch.rays.push(Ray {
            origin,
            direction,
            near,
            far,
        });
        batch.targets.push([0, 1, 2].map(|_| rng.random_range(0.0..1.0)));
        samples.push(RaySamples {
            depths: stratified_depths(near, far, 8, Some(&mut rng)),
        });
    }
    MicroScene {
        fields,
        batch,
        samples,
        config,
    }
}

pub fn micro_loss(scene: &MicroScene) -> f64 {
    let tape = Tape::new();
    let vars = scene.fields.params.bind(&tape);
    batch_loss(&scene.fields, &vars, &tape, &scene.batch, &scene.samples, &scene.config)
        .unwrap()
        .breakdown
        .total
}

pub struct AuditResult {
    pub worst_rel: f64,
    pub worst_name: String,
    pub checked: usize,
}

/// Fourth-order central differences of the full loss with respect to every parameter
/// value, compared with the backward pass.
pub fn gradient_audit(scene: &mut MicroScene, h: f64) -> AuditResult {
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars = scene.fields.params.bind(&tape);
        let loss = batch_loss(&scene.fields, &vars, &tape, &scene.batch, &scene.samples, &scene.config).unwrap();
        tape.backward(loss.total).unwrap();
        scene.fields.params.zero_grads();
        scene.fields.params.accumulate_grads(&vars);
        scene.fields.params.iter().map(|(_, p)| p.grad.data().to_vec()).collect()
    };
    scene.fields.params.zero_grads();
    let ids: Vec<_> = scene.fields.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut result = AuditResult {
        worst_rel: 0.0,
        worst_name: String::new(),
        checked: 0,
    };
    for (k, (id, name)) in ids.iter().enumerate() {
        for j in 0..analytic[k].len() {
            let original = scene.fields.params.value(*id).data()[j];
            let mut at = |offset: f64| {
                scene.fields.params.value_mut(*id).data_mut()[j] = original + offset;
                micro_loss(scene)
            };
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            scene.fields.params.value_mut(*id).data_mut()[j] = original;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic[k][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > result.worst_rel {
                result.worst_rel = rel;
                result.worst_name = format!("{name}[{j}] analytic {a:e} numeric {numeric:e}");
            }
            result.checked += 1;
        }
    }
    result
}

/// Lambertian sphere seen through glass: a dimmed box rendered from the
/// opposite side of the ring is blurred and added to every view.
pub struct ReflectionScene {
    pub dataset: hsr_core::dataset::SceneDataset,
    pub mesh: hsr_core::mesh::TriangleMesh,
    pub radius: f64,
}

pub fn reflection_scene(views: usize, size: usize, radius: f64, seed: u64) -> ReflectionScene {
    use hsr_core::dataset::{make_toy_scene, synthesize_scene, SynthesisSpec, ToySceneSpec, ToyShape};
    let base = ToySceneSpec {
        views,
        width: size,
        height: size,
        seed,
        ..ToySceneSpec::default()
    };
    let transmission = make_toy_scene(&ToySceneSpec {
        shape: ToyShape::Sphere { radius },
        ..base
    })
    .unwrap();
    let reflection = make_toy_scene(&ToySceneSpec {
        shape: ToyShape::Box { half_extent: 0.35 },
        seed: seed.wrapping_add(1),
        brightness: 0.6,
        background: [0.0; 3],
        azimuth_offset: std::f64::consts::PI,
        ..base
    })
    .unwrap();
    ReflectionScene {
        dataset: synthesize_scene(&transmission.dataset, &reflection.dataset, &SynthesisSpec::default()).unwrap(),
        mesh: transmission.mesh,
        radius,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoPlane,
    NoDensity,
    NoAttributes,
}

impl Variant {
    pub fn options(self) -> PlaneOptions {
        match self {
            Variant::Full => PlaneOptions::default(),
            Variant::NoPlane => PlaneOptions::disabled(),
            Variant::NoDensity => PlaneOptions {
                density: false,
                ..PlaneOptions::default()
            },
            Variant::NoAttributes => PlaneOptions {
                attributes: false,
                ..PlaneOptions::default()
            },
        }
    }
}

pub struct RunOutcome {
    pub chamfer: f64,
    pub fields: FieldSet,
    pub seconds: f64,
}

/// Trains one variant and scores its extracted mesh against the truth.
pub fn train_and_score(scene: &ReflectionScene, config: &TrainConfig, resolution: usize, samples: usize) -> RunOutcome {
    use hsr_core::mesh::chamfer_distance;
    use hsr_core::trainer::{extract_mesh, Trainer};
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(&scene.dataset, config.clone()).unwrap();
    while trainer.step < config.iterations {
        trainer.train_step().unwrap();
    }
    let mesh = extract_mesh(&trainer.fields, resolution).unwrap();
    let chamfer = if mesh.is_empty() {
        f64::INFINITY
    } else {
        let a = mesh.sample_surface(samples, &mut ChaCha8Rng::seed_from_u64(0));
        let b = scene.mesh.sample_surface(samples, &mut ChaCha8Rng::seed_from_u64(0));
        chamfer_distance(&a, &b).unwrap()
    };
    RunOutcome {
        chamfer,
        fields: trainer.fields,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Share of rays through the true sphere whose object-path weight peak
/// exceeds the plane-path peak, over the given views.
pub fn object_attention(scene: &ReflectionScene, fields: &FieldSet, config: &TrainConfig, views: &[usize]) -> (usize, usize) {
    use hsr_core::renderer::render_image;
    let options = config.render_options();
    let (mut wins, mut total) = (0, 0);
    for &v in views {
        let camera = scene.dataset.normalized_camera(v);
        let image = render_image(fields, &camera, &options).unwrap();
        for y in 0..camera.height {
            for x in 0..camera.width {
                let direction = camera.pixel_direction(x, y).unwrap();
                if sphere_clip(&camera.center(), &direction, scene.radius).is_none() {
                    continue;
                }
                let i = y * camera.width + x;
                total += 1;
                if image.object_peak[i] > image.plane_peak[i] {
                    wins += 1;
                }
            }
        }
    }
    (wins, total)
}
