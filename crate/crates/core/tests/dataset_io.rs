use hsr_core::dataset::{
    composite_unclamped, gaussian_blur, make_toy_scene, save_toy_scene, synthesize_hsr, synthesize_scene,
    SceneDataset, SynthesisSpec, ToySceneSpec, ToyShape, CAMERAS_FILE,
};
use hsr_core::raster::Image;
use hsr_core::HsrError;
use proptest::prelude::*;

fn small_spec(seed: u64) -> ToySceneSpec {
    ToySceneSpec {
        views: 3,
        width: 24,
        height: 20,
        seed,
        ..ToySceneSpec::default()
    }
}

#[test]
fn saved_scene_loads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let scene = make_toy_scene(&small_spec(1)).unwrap();
    let mesh = save_toy_scene(&scene, dir.path()).unwrap();
    assert!(mesh.is_file());
    let loaded = SceneDataset::load(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    assert_eq!(loaded.resolution(), (24, 20));
    for (a, b) in loaded.views.iter().zip(&scene.dataset.views) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.image_name, b.image_name);
        assert!((a.camera.camera_to_world - b.camera.camera_to_world).abs().max() < 1e-12);
        assert_eq!(a.camera.intrinsics(), b.camera.intrinsics());
    }
}

#[test]
fn missing_cameras_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(SceneDataset::load(dir.path()), Err(HsrError::CamerasNotFound(_))));
}

#[test]
fn malformed_cameras_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(CAMERAS_FILE), "{\"views\": 3}").unwrap();
    assert!(matches!(SceneDataset::load(dir.path()), Err(HsrError::MalformedCameras { .. })));
    let scene = make_toy_scene(&small_spec(2)).unwrap();
    scene.dataset.save(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(CAMERAS_FILE)).unwrap();
    let broken = text.replacen("\"scale\": 1.0", "\"scale\": -1.0", 1);
    std::fs::write(dir.path().join(CAMERAS_FILE), broken).unwrap();
    assert!(matches!(SceneDataset::load(dir.path()), Err(HsrError::MalformedCameras { .. })));
}

#[test]
fn missing_image_and_resolution_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let scene = make_toy_scene(&small_spec(3)).unwrap();
    scene.dataset.save(dir.path()).unwrap();
    let second = dir.path().join(&scene.dataset.views[1].image_name);
    Image::filled(10, 10, [0.5; 3]).save(&second).unwrap();
    assert!(matches!(SceneDataset::load(dir.path()), Err(HsrError::ResolutionMismatch { .. })));
    std::fs::remove_file(&second).unwrap();
    assert!(matches!(SceneDataset::load(dir.path()), Err(HsrError::MissingImage(_))));
}

#[test]
fn zero_reflection_keeps_transmission_bytes() {
    let scene = make_toy_scene(&small_spec(4)).unwrap();
    let black = Image::filled(24, 20, [0.0; 3]);
    let spec = SynthesisSpec::default();
    for view in &scene.dataset.views {
        let out = synthesize_hsr(&view.image, &black, &spec).unwrap();
        assert_eq!(out.to_rgb8(), view.image.to_rgb8());
    }
}

#[test]
fn kernel_sums_to_one_and_is_symmetric() {
    for size in [3, 5, 11, 21] {
        let spec = SynthesisSpec {
            kernel_size: size,
            sigma: None,
        };
        let k2 = spec.kernel_2d();
        assert!((k2.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..size {
            for j in 0..size {
                assert_eq!(k2[i * size + j], k2[j * size + i]);
                assert!(k2[i * size + j] > 0.0);
            }
        }
    }
    assert!((SynthesisSpec::default().sigma() - 10.0 / 6.0).abs() < 1e-15);
    assert!(SynthesisSpec { kernel_size: 4, sigma: None }.validate().is_err());
}

#[test]
fn blur_of_constant_is_constant() {
    let img = Image::filled(9, 7, [0.25, 0.5, 0.75]);
    let out = gaussian_blur(&img, &SynthesisSpec::default());
    for (a, b) in out.data.iter().zip(&img.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn view_count_mismatch_names_both_counts() {
    let a = make_toy_scene(&small_spec(5)).unwrap().dataset;
    let b = make_toy_scene(&ToySceneSpec { views: 2, ..small_spec(6) }).unwrap().dataset;
    let err = synthesize_scene(&a, &b, &SynthesisSpec::default()).unwrap_err().to_string();
    assert!(err.contains('3') && err.contains('2'), "{err}");
}

#[test]
fn toy_geometry_and_textures() {
    let a = make_toy_scene(&small_spec(7)).unwrap();
    let b = make_toy_scene(&small_spec(8)).unwrap();
    assert_eq!(a.mesh, b.mesh);
    assert_ne!(a.dataset.views[0].image, b.dataset.views[0].image);
    assert!(a.mesh.vertices.iter().all(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 0.5).abs() < 1e-12));
    // the sphere is centred in every view
    for view in &a.dataset.views {
        let c = view.image.pixel(12, 10);
        assert_ne!(c, [0.2; 3]);
        assert_eq!(view.image.pixel(0, 0), [0.2f64, 0.2, 0.2].map(|v| (v * 255.0f64).round() / 255.0));
    }
    let boxed = make_toy_scene(&ToySceneSpec {
        shape: ToyShape::Box { half_extent: 0.3 },
        ..small_spec(9)
    })
    .unwrap();
    assert!(boxed.mesh.vertices.iter().all(|v| v.iter().all(|c| c.abs() <= 0.3 + 1e-12)));
}

#[test]
fn toy_object_inside_unit_sphere_after_normalization() {
    let scene = make_toy_scene(&small_spec(10)).unwrap();
    let d = &scene.dataset;
    for v in &scene.mesh.vertices {
        let p = (hsr_core::geometry::Vec3::from(*v) - d.offset) * d.scale;
        assert!(p.norm() < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synthesis_is_monotone(
        base in prop::collection::vec(0.0..1.0f64, 48),
        refl in prop::collection::vec(0.0..1.0f64, 48),
        px in 0usize..16,
        bump in 0.01..1.0f64,
    ) {
        let t = Image { width: 4, height: 4, data: base };
        let r = Image { width: 4, height: 4, data: refl };
        let spec = SynthesisSpec { kernel_size: 3, sigma: None };
        let before = composite_unclamped(&t, &r, &spec).unwrap();
        let mut r2 = r.clone();
        r2.data[3 * px] += bump;
        let after = composite_unclamped(&t, &r2, &spec).unwrap();
        for (a, b) in after.data.iter().zip(&before.data) {
            prop_assert!(a >= b);
        }
    }
}
