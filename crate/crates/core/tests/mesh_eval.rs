use hsr_core::mesh::{
    chamfer_distance, marching_cubes, read_mesh, write_mesh, GridBounds, KdTree, Point, TriangleMesh,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn dist(a: &Point, b: &Point) -> f64 {
    norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

fn sphere_sdf(points: &[Point]) -> hsr_core::Result<Vec<f64>> {
    Ok(points.iter().map(|p| norm(p) - 0.5).collect())
}

fn brute_chamfer(a: &[Point], b: &[Point]) -> f64 {
    let one = |x: &[Point], y: &[Point]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

fn sphere_samples(count: usize, radius: f64, rng: &mut impl Rng) -> Vec<Point> {
    (0..count)
        .map(|_| {
            let g: Point = [0, 1, 2].map(|_| rng.sample::<f64, _>(StandardNormal));
            let n = norm(&g);
            g.map(|c| radius * c / n)
        })
        .collect()
}

fn random_points(n: usize, rng: &mut impl Rng) -> Vec<Point> {
    (0..n)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

#[test]
fn sphere_radius_within_two_voxels() {
    let mesh = marching_cubes(sphere_sdf, 64, 0.0, GridBounds::default()).unwrap();
    assert!(mesh.triangles.len() > 1000);
    let voxel = 2.0 / 64.0;
    let worst = mesh.vertices.iter().map(|v| (norm(v) - 0.5).abs()).fold(0.0, f64::max);
    assert!(worst < 2.0 * voxel, "{worst}");
    // linear interpolation bound on the field itself
    let diagonal = voxel * 3f64.sqrt();
    let values = sphere_sdf(&mesh.vertices).unwrap();
    assert!(values.iter().all(|v| v.abs() < diagonal));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let area = mesh.area();
    let exact = std::f64::consts::PI;
    assert!((area - exact).abs() / exact < 0.02, "area {area}");
    let cd = chamfer_distance(&mesh.sample_surface(20_000, &mut rng), &sphere_samples(20_000, 0.5, &mut rng)).unwrap();
    assert!(cd < 0.01, "{cd}");
}

#[test]
fn plane_field_is_interpolated_exactly() {
    let mesh = marching_cubes(|p| Ok(p.iter().map(|q| q[2] - 0.1).collect()), 8, 0.0, GridBounds::default()).unwrap();
    assert!(!mesh.is_empty());
    assert!(mesh.vertices.iter().all(|v| (v[2] - 0.1).abs() < 1e-9));
    assert!((mesh.area() - 4.0).abs() < 1e-9);
}

#[test]
fn field_without_sign_change_gives_empty_mesh() {
    let mesh = marching_cubes(|p| Ok(vec![1.0; p.len()]), 8, 0.0, GridBounds::default()).unwrap();
    assert!(mesh.is_empty() && mesh.vertices.is_empty());
}

#[test]
fn chamfer_definition_examples() {
    assert_eq!(chamfer_distance(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_points(100, &mut rng);
    assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    assert!(chamfer_distance(&a, &[]).is_err());
    assert!(chamfer_distance(&[], &a).is_err());
}

#[test]
fn indexed_chamfer_matches_brute_force_on_500_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let a = random_points(500, &mut rng);
        let b = random_points(500, &mut rng);
        let fast = chamfer_distance(&a, &b).unwrap();
        assert!((fast - brute_chamfer(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn mesh_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = TriangleMesh::icosphere(0.5, 2);
    let obj = dir.path().join("m.obj");
    write_mesh(&mesh, &obj).unwrap();
    assert_eq!(read_mesh(&obj).unwrap(), mesh);
    let ply = dir.path().join("m.ply");
    write_mesh(&mesh, &ply).unwrap();
    let back = read_mesh(&ply).unwrap();
    assert_eq!(back.triangles, mesh.triangles);
    for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
        assert!(dist(a, b) < 1e-6);
    }
}

#[test]
fn cleanup_drops_degenerate_and_unreferenced() {
    let mut mesh = TriangleMesh {
        vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [5.0; 3]],
        triangles: vec![[0, 1, 2], [0, 1, 3], [1, 1, 2]],
    };
    mesh.cleanup();
    assert_eq!(mesh.triangles.len(), 1);
    assert_eq!(mesh.vertices.len(), 3);
}

#[test]
fn area_sampling_is_uniform() {
    // two triangles, the second with three times the area
    let mesh = TriangleMesh {
        vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0], [3.0, 0.0, 5.0], [0.0, 1.0, 5.0]],
        triangles: vec![[0, 1, 2], [3, 4, 5]],
    };
    let pts = mesh.sample_surface(40_000, &mut ChaCha8Rng::seed_from_u64(3));
    let upper = pts.iter().filter(|p| p[2] > 2.5).count() as f64 / pts.len() as f64;
    assert!((upper - 0.75).abs() < 0.01, "{upper}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chamfer_is_symmetric(seed in any::<u64>(), n in 1usize..60, m in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_points(n, &mut rng);
        let b = random_points(m, &mut rng);
        prop_assert_eq!(chamfer_distance(&a, &b).unwrap(), chamfer_distance(&b, &a).unwrap());
    }

    #[test]
    fn translation_changes_chamfer_by_at_most_shift(seed in any::<u64>(), shift in prop::array::uniform3(-0.5..0.5f64)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_points(40, &mut rng);
        let b = random_points(50, &mut rng);
        let moved: Vec<Point> = b.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        let delta = (chamfer_distance(&a, &b).unwrap() - chamfer_distance(&a, &moved).unwrap()).abs();
        prop_assert!(delta <= norm(&shift) + 1e-12);
    }

    #[test]
    fn kd_tree_nearest_matches_scan(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(n, &mut rng);
        let tree = KdTree::new(&pts);
        for q in random_points(20, &mut rng) {
            let best = pts.iter().map(|p| dist(p, &q)).fold(f64::INFINITY, f64::min);
            prop_assert!((tree.nearest_distance(&q).unwrap() - best).abs() < 1e-12);
        }
    }
}
