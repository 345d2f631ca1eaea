use hsr_autodiff::{Checkpoint, Tape};
use hsr_core::dataset::{make_toy_scene, SceneDataset, ToySceneSpec};
use hsr_core::fields::{FieldConfig, PlaneOptions};
use hsr_core::renderer::SamplingConfig;
use hsr_core::trainer::{batch_loss, load_fields, train, LossBreakdown, TrainConfig, Trainer, LOG_FILE};
use hsr_core::HsrError;

fn scene(views: usize, size: usize) -> SceneDataset {
    make_toy_scene(&ToySceneSpec {
        views,
        width: size,
        height: size,
        ..ToySceneSpec::default()
    })
    .unwrap()
    .dataset
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        iterations: 50,
        seed,
        fields: FieldConfig {
            sdf_width: 16,
            feature_width: 8,
            plane_width: 16,
            color_width: 16,
            ..FieldConfig::default()
        },
        sampling: SamplingConfig {
            coarse: 12,
            rounds: 1,
            per_round: 4,
            base_sharpness: 32.0,
        },
        ..TrainConfig::micro()
    }
}

fn run(dataset: &SceneDataset, config: TrainConfig, steps: usize) -> Vec<LossBreakdown> {
    let mut t = Trainer::new(dataset, config).unwrap();
    (0..steps).map(|_| t.train_step().unwrap()).collect()
}

#[test]
fn same_seed_same_losses() {
    let data = scene(2, 16);
    let a = run(&data, tiny_config(3), 4);
    let b = run(&data, tiny_config(3), 4);
    assert_eq!(a, b);
    let c = run(&data, tiny_config(4), 4);
    assert_ne!(a, c);
}

#[test]
fn loss_assembly_identity() {
    let data = scene(2, 16);
    for lambda1 in [0.0, 0.1, 0.37] {
        let config = TrainConfig { lambda1, ..tiny_config(5) };
        for l in run(&data, config, 3) {
            assert!(l.color >= 0.0 && l.eikonal >= 0.0 && l.normal >= 0.0);
            assert_eq!(l.total, l.color + lambda1 * (l.eikonal + l.normal));
            if lambda1 == 0.0 {
                assert_eq!(l.total, l.color);
            }
        }
    }
}

#[test]
fn object_only_run_has_no_normal_loss() {
    let data = scene(2, 16);
    let config = TrainConfig {
        plane: PlaneOptions::disabled(),
        ..tiny_config(6)
    };
    for l in run(&data, config, 2) {
        assert_eq!(l.normal, 0.0);
    }
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let data = scene(2, 16);
    let config = tiny_config(7);
    let full = run(&data, config.clone(), 6);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut first = Trainer::new(&data, config).unwrap();
    let mut resumed_losses: Vec<LossBreakdown> = (0..3).map(|_| first.train_step().unwrap()).collect();
    first.checkpoint().save(&path).unwrap();
    drop(first);
    let checkpoint = Checkpoint::load(&path).unwrap();
    let mut second = Trainer::resume(&data, &checkpoint).unwrap();
    assert_eq!(second.step, 3);
    resumed_losses.extend((0..3).map(|_| second.train_step().unwrap()));
    assert_eq!(resumed_losses, full);
}

#[test]
fn gradients_reach_sdf_and_plane_parameters() {
    let data = scene(2, 24);
    let mut trainer = Trainer::new(&data, tiny_config(8)).unwrap();
    let mut rng = hsr_core::trainer::step_rng(8, 0);
    let batch = trainer.draw_batch(&mut rng).unwrap();
    assert!(!batch.rays.is_empty());
    let config = trainer.config.clone();
    let samples =
        hsr_core::renderer::sample_hierarchical(&trainer.fields, &batch.rays, &config.sampling, Some(&mut rng))
            .unwrap();
    let tape = Tape::new();
    let vars = trainer.fields.params.bind(&tape);
    let loss = batch_loss(&trainer.fields, &vars, &tape, &batch, &samples, &config).unwrap();
    tape.backward(loss.total).unwrap();
    trainer.fields.params.accumulate_grads(&vars);
    let grad_norm = |prefix: &str| -> f64 {
        trainer
            .fields
            .params
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .flat_map(|(_, p)| p.grad.data().to_vec())
            .map(|g| g * g)
            .sum()
    };
    assert!(grad_norm("sdf.") > 0.0);
    assert!(grad_norm("plane.density") > 0.0);
    assert!(grad_norm("plane.position") > 0.0);
    assert!(grad_norm("plane.normal") > 0.0);
    assert!(grad_norm("color.") > 0.0);
}

#[test]
fn non_finite_loss_reports_step() {
    let data = scene(2, 16);
    let mut trainer = Trainer::new(&data, tiny_config(9)).unwrap();
    trainer.train_step().unwrap();
    let bg = trainer.fields.background;
    trainer.fields.params.value_mut(bg).data_mut()[0] = f64::NAN;
    match trainer.train_step() {
        Err(HsrError::NonFiniteLoss { step, color, .. }) => {
            assert_eq!(step, 1);
            assert!(color.is_nan());
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn single_view_overfit_halves_colour_loss() {
    let data = scene(1, 32);
    let config = TrainConfig {
        batch_size: 64,
        iterations: 500,
        ..tiny_config(10)
    };
    let losses = run(&data, config, 500);
    let mean = |s: &[LossBreakdown]| s.iter().map(|l| l.color).sum::<f64>() / s.len() as f64;
    let (start, end) = (mean(&losses[..20]), mean(&losses[480..]));
    assert!(end < 0.5 * start, "start {start}, end {end}");
}

#[test]
fn train_writes_log_checkpoint_and_renders() {
    let data = scene(2, 12);
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        iterations: 6,
        log_every: 2,
        checkpoint_every: 3,
        validate_every: 6,
        ..tiny_config(11)
    };
    let mut trainer = Trainer::new(&data, config.clone()).unwrap();
    let path = train(&mut trainer, dir.path()).unwrap();
    let checkpoint = Checkpoint::load(&path).unwrap();
    assert_eq!(checkpoint.step, 6);
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("step 2 color "));
    for key in ["eikonal", "normal", "total", " s ", "time"] {
        assert!(lines[0].contains(key), "{key} missing from {}", lines[0]);
    }
    assert!(dir.path().join("validation/step_0000006.png").is_file());
    let (fields, restored, step) = load_fields(&path).unwrap();
    assert_eq!(step, 6);
    assert_eq!(restored, config);
    assert_eq!(fields.params.numel(), trainer.fields.params.numel());

    // extending the run continues from the saved step
    let extended = TrainConfig {
        iterations: 8,
        ..config
    };
    let mut more = Trainer::resume_with(&data, &checkpoint, extended).unwrap();
    train(&mut more, dir.path()).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap().step, 8);
}

#[test]
fn object_only_log_omits_normal_loss() {
    let data = scene(2, 12);
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        iterations: 2,
        log_every: 1,
        plane: PlaneOptions::disabled(),
        ..tiny_config(12)
    };
    let mut trainer = Trainer::new(&data, config).unwrap();
    let path = train(&mut trainer, dir.path()).unwrap();
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert!(!log.contains("normal"));
    let checkpoint = Checkpoint::load(&path).unwrap();
    assert!(checkpoint.params.iter().all(|(_, p)| !p.name.starts_with("plane.")));
}

#[test]
fn background_starts_at_observed_colour() {
    let data = make_toy_scene(&ToySceneSpec {
        views: 2,
        width: 24,
        height: 24,
        background: [0.1, 0.3, 0.8],
        ..ToySceneSpec::default()
    })
    .unwrap()
    .dataset;
    let trainer = Trainer::new(&data, tiny_config(13)).unwrap();
    let bg = trainer.fields.background_color();
    // images hold 8-bit values
    for (a, b) in bg.iter().zip([0.1f64, 0.3, 0.8]) {
        assert!((a - (b * 255.0).round() / 255.0).abs() < 1e-9, "{bg:?}");
    }
}
