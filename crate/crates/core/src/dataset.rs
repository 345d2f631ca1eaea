//! Posed image collections, reflection compositing, and analytic toy scenes.
//!
//! A scene directory holds one image per view and a `cameras.json`:
//!
//! ```json
//! {"views": [{"image": "view_000.png", "intrinsics": [fx, fy, cx, cy],
//!             "camera_to_world": [16 row-major floats]}],
//!  "scale": 1.0, "offset": [0, 0, 0]}
//! ```
//!
//! Cameras are stored in the file frame; `(p - offset) · scale` maps the
//! region of interest into the unit sphere.

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HsrError, Result};
use crate::fsutil::write_atomic;
use crate::geometry::{sphere_clip, Camera, Vec3};
use crate::mesh::TriangleMesh;
use crate::metrics::gaussian_kernel;
use crate::raster::Image;

pub const CAMERAS_FILE: &str = "cameras.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CamerasFile {
    views: Vec<ViewRecord>,
    scale: f64,
    offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ViewRecord {
    image: String,
    intrinsics: [f64; 4],
    camera_to_world: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// Image file name relative to the scene directory.
    pub image_name: String,
    pub image: Image,
    /// Camera in the file frame.
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub name: String,
    pub views: Vec<View>,
    pub scale: f64,
    pub offset: Vec3,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// `(width, height)` shared by all views.
    pub fn resolution(&self) -> (usize, usize) {
        self.views.first().map_or((0, 0), |v| v.image.resolution())
    }

    /// Camera of view `i` in the unit-sphere frame.
    pub fn normalized_camera(&self, i: usize) -> Camera {
        self.views[i].camera.normalized(self.scale, self.offset)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cameras_path = dir.join(CAMERAS_FILE);
        if !cameras_path.is_file() {
            return Err(HsrError::CamerasNotFound(cameras_path));
        }
        let malformed = |reason: String| HsrError::MalformedCameras {
            path: cameras_path.clone(),
            reason,
        };
        let text = std::fs::read_to_string(&cameras_path)?;
        let file: CamerasFile = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        if file.views.is_empty() {
            return Err(malformed("no views".into()));
        }
        if !(file.scale > 0.0 && file.scale.is_finite()) {
            return Err(malformed(format!("scale must be positive, got {}", file.scale)));
        }
        let images: Vec<Image> = file
            .views
            .par_iter()
            .map(|v| Image::load(&dir.join(&v.image)))
            .collect::<Result<_>>()?;
        let expected = images[0].resolution();
        let mut views = Vec::with_capacity(images.len());
        for (record, image) in file.views.into_iter().zip(images) {
            if image.resolution() != expected {
                return Err(HsrError::ResolutionMismatch {
                    expected,
                    found: image.resolution(),
                });
            }
            if record.camera_to_world.len() != 16 {
                return Err(malformed(format!(
                    "view {:?}: camera_to_world needs 16 values, got {}",
                    record.image,
                    record.camera_to_world.len()
                )));
            }
            let m = Matrix4::from_row_slice(&record.camera_to_world);
            let camera = Camera::new(record.intrinsics, m, expected.0, expected.1)
                .map_err(|e| malformed(format!("view {:?}: {e}", record.image)))?;
            views.push(View {
                image_name: record.image,
                image,
                camera,
            });
        }
        Ok(Self {
            name: dir
                .file_name()
                .map_or_else(|| "scene".into(), |n| n.to_string_lossy().into_owned()),
            views,
            scale: file.scale,
            offset: Vec3::from(file.offset),
        })
    }

    /// Writes every image and the cameras file into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.views
            .par_iter()
            .map(|v| v.image.save(&dir.join(&v.image_name)))
            .collect::<Result<Vec<()>>>()?;
        let file = CamerasFile {
            views: self
                .views
                .iter()
                .map(|v| ViewRecord {
                    image: v.image_name.clone(),
                    intrinsics: v.camera.intrinsics(),
                    camera_to_world: (0..4)
                        .flat_map(|r| (0..4).map(move |c| (r, c)))
                        .map(|(r, c)| v.camera.camera_to_world[(r, c)])
                        .collect(),
                })
                .collect(),
            scale: self.scale,
            offset: self.offset.into(),
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| HsrError::Io(e.into()))?;
        write_atomic(&dir.join(CAMERAS_FILE), json.as_bytes())
    }
}

/// Blur settings for compositing a reflection layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthesisSpec {
    pub kernel_size: usize,
    /// Defaults to `(size - 1) / 6`.
    pub sigma: Option<f64>,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        Self {
            kernel_size: 11,
            sigma: None,
        }
    }
}

impl SynthesisSpec {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or((self.kernel_size as f64 - 1.0) / 6.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(HsrError::InvalidConfig(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma() > 0.0) {
            return Err(HsrError::InvalidConfig("kernel sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn kernel_1d(&self) -> Vec<f64> {
        gaussian_kernel(self.kernel_size, self.sigma())
    }

    /// Row-major `size × size` kernel, the outer product of [`Self::kernel_1d`].
    pub fn kernel_2d(&self) -> Vec<f64> {
        let k = self.kernel_1d();
        k.iter().flat_map(|a| k.iter().map(move |b| a * b)).collect()
    }
}

/// Index into `[0, n)` with symmetric (edge-repeating) reflection.
fn symmetric_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur with symmetric padding, per channel.
pub fn gaussian_blur(img: &Image, spec: &SynthesisSpec) -> Image {
    let k = spec.kernel_1d();
    let r = (k.len() / 2) as isize;
    let (w, h) = img.resolution();
    let mut rows = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                rows[3 * (y * w + x) + c] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * img.data[3 * (y * w + symmetric_index(x as isize + i as isize - r, w)) + c])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[3 * (y * w + x) + c] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * rows[3 * (symmetric_index(y as isize + i as isize - r, h) * w + x) + c])
                    .sum();
            }
        }
    }
    Image {
        width: w,
        height: h,
        data: out,
    }
}

/// `T + K ⊗ R'` before clamping.
pub fn composite_unclamped(transmission: &Image, reflection: &Image, spec: &SynthesisSpec) -> Result<Image> {
    spec.validate()?;
    if transmission.resolution() != reflection.resolution() {
        return Err(HsrError::ResolutionMismatch {
            expected: transmission.resolution(),
            found: reflection.resolution(),
        });
    }
    let blurred = gaussian_blur(reflection, spec);
    Ok(Image {
        data: transmission.data.iter().zip(&blurred.data).map(|(t, r)| t + r).collect(),
        ..transmission.clone()
    })
}

/// Composites a blurred reflection layer over a transmission image and
/// clamps the result to `[0, 1]`.
pub fn synthesize_hsr(transmission: &Image, reflection: &Image, spec: &SynthesisSpec) -> Result<Image> {
    Ok(composite_unclamped(transmission, reflection, spec)?.clamped())
}

/// Index-paired compositing of two scenes; cameras come from `transmission`.
pub fn synthesize_scene(
    transmission: &SceneDataset,
    reflection: &SceneDataset,
    spec: &SynthesisSpec,
) -> Result<SceneDataset> {
    if transmission.len() != reflection.len() {
        return Err(HsrError::CountMismatch {
            what: "view",
            left: transmission.len(),
            right: reflection.len(),
        });
    }
    let views = transmission
        .views
        .par_iter()
        .zip(&reflection.views)
        .map(|(t, r)| {
            Ok(View {
                image: synthesize_hsr(&t.image, &r.image, spec)?,
                ..t.clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok(SceneDataset {
        name: format!("{}+{}", transmission.name, reflection.name),
        views,
        scale: transmission.scale,
        offset: transmission.offset,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ToyShape {
    Sphere { radius: f64 },
    Box { half_extent: f64 },
}

impl ToyShape {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match *self {
            ToyShape::Sphere { radius } => p.norm() - radius,
            ToyShape::Box { half_extent } => {
                let q = p.abs().add_scalar(-half_extent);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
        }
    }

    /// First hit `(t, outward normal)` of `o + t v` with the shape.
    fn intersect(&self, o: &Vec3, v: &Vec3) -> Option<(f64, Vec3)> {
        match *self {
            ToyShape::Sphere { radius } => {
                let (near, _) = sphere_clip(o, v, radius)?;
                if near <= 0.0 {
                    return None;
                }
                let p = o + v * near;
                Some((near, p / radius))
            }
            ToyShape::Box { half_extent } => {
                let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
                for d in 0..3 {
                    if v[d].abs() < 1e-300 {
                        if o[d].abs() > half_extent {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extent - o[d]) / v[d];
                    let b = (half_extent - o[d]) / v[d];
                    let (lo, hi) = (a.min(b), a.max(b));
                    if lo > t0 {
                        t0 = lo;
                        axis = d;
                    }
                    t1 = t1.min(hi);
                }
                if t0 > t1 || t0 <= 0.0 {
                    return None;
                }
                let mut n = Vec3::zeros();
                n[axis] = -v[axis].signum();
                Some((t0, n))
            }
        }
    }

    /// Exact surface mesh (finely tessellated for the sphere).
    pub fn mesh(&self) -> TriangleMesh {
        match *self {
            ToyShape::Sphere { radius } => TriangleMesh::icosphere(radius, 5),
            ToyShape::Box { half_extent } => TriangleMesh::cube(half_extent, 8),
        }
    }
}

/// Parameters of an analytically rendered scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySceneSpec {
    pub shape: ToyShape,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Multiplies the shaded colour.
    pub brightness: f64,
    pub background: [f64; 3],
    pub camera_distance: f64,
    /// Rotates the camera ring about the vertical axis (radians).
    pub azimuth_offset: f64,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self {
            shape: ToyShape::Sphere { radius: 0.5 },
            views: 20,
            width: 128,
            height: 128,
            seed: 0,
            brightness: 1.0,
            background: [0.2, 0.2, 0.2],
            camera_distance: 2.5,
            azimuth_offset: 0.0,
        }
    }
}

pub struct ToyScene {
    pub dataset: SceneDataset,
    pub mesh: TriangleMesh,
}

/// Cameras on a ring around the origin (z up), alternating between two
/// elevations, all looking at the origin.
pub fn ring_cameras(spec: &ToySceneSpec) -> Result<Vec<Camera>> {
    let f = 1.1 * spec.width as f64;
    let intrinsics = [f, f, spec.width as f64 / 2.0, spec.height as f64 / 2.0];
    (0..spec.views)
        .map(|i| {
            let azimuth = spec.azimuth_offset + std::f64::consts::TAU * i as f64 / spec.views as f64;
            let elevation = if i % 2 == 0 { 20f64 } else { 35f64 }.to_radians();
            let eye = spec.camera_distance
                * Vec3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
            Camera::look_at(eye, Vec3::zeros(), Vec3::z(), intrinsics, spec.width, spec.height)
        })
        .collect()
}

/// Lambertian shape with a seeded sinusoidal albedo, ray traced from a ring
/// of cameras, together with its exact mesh. Coordinates are already in the
/// unit-sphere frame.
pub fn make_toy_scene(spec: &ToySceneSpec) -> Result<ToyScene> {
    if spec.views == 0 {
        return Err(HsrError::InvalidConfig(format!(
            "a toy scene needs at least one view, got {}",
            spec.views
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let waves: Vec<(Vec3, f64)> = (0..3)
        .map(|_| {
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let freq = rng.random_range(6.0..12.0);
            (dir.normalize() * freq, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let light = Vec3::new(0.4, 0.3, 0.85).normalize();
    let shade = |p: &Vec3, n: &Vec3| -> [f64; 3] {
        let lambert = 0.35 + 0.65 * n.dot(&light).max(0.0);
        [0, 1, 2].map(|c| {
            let (k, phase) = waves[c];
            let albedo = 0.55 + 0.35 * (k.dot(p) + phase).sin();
            (albedo * lambert * spec.brightness).clamp(0.0, 1.0)
        })
    };
    let cameras = ring_cameras(spec)?;
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let mut image = Image::filled(spec.width, spec.height, spec.background);
            let o = camera.center();
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let v = camera.pixel_direction(x, y)?;
                    if let Some((t, n)) = spec.shape.intersect(&o, &v) {
                        image.set_pixel(x, y, shade(&(o + v * t), &n));
                    }
                }
            }
            // quantize so the in-memory scene equals its saved form
            let image = Image::from_rgb8(spec.width, spec.height, &image.to_rgb8());
            Ok(View {
                image_name: format!("view_{i:03}.png"),
                image,
                camera,
            })
        })
        .collect::<Result<_>>()?;
    let name = match spec.shape {
        ToyShape::Sphere { .. } => "toy_sphere",
        ToyShape::Box { .. } => "toy_box",
    };
    Ok(ToyScene {
        dataset: SceneDataset {
            name: name.into(),
            views,
            scale: 1.0,
            offset: Vec3::zeros(),
        },
        mesh: spec.shape.mesh(),
    })
}

/// Writes a toy scene and its mesh (`mesh.obj`) into `dir`.
pub fn save_toy_scene(scene: &ToyScene, dir: &Path) -> Result<PathBuf> {
    scene.dataset.save(dir)?;
    let mesh_path = dir.join("mesh.obj");
    crate::mesh::write_mesh(&scene.mesh, &mesh_path)?;
    Ok(mesh_path)
}
