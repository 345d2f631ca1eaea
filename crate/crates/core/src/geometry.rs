//! Pinhole cameras, ray/sphere clipping, and the per-ray auxiliary plane
//! with its homogeneous reflection transform.
//!
//! Camera frames follow the OpenCV convention: +x right, +y down, +z forward.
//! Plane quantities live in the camera-centred frame `p' = p - o`, which is
//! the world frame shifted to the ray origin (no rotation).

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{HsrError, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub camera_to_world: Matrix4<f64>,
}

impl Camera {
    pub fn new(
        intrinsics: [f64; 4],
        camera_to_world: Matrix4<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(HsrError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(HsrError::InvalidCamera("empty image".into()));
        }
        let r = camera_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err < 1e-6) {
            return Err(HsrError::InvalidCamera(format!(
                "rotation block is not orthonormal (error {err:.3e})"
            )));
        }
        let last_row = camera_to_world.row(3);
        if (last_row - Vector4::new(0.0, 0.0, 0.0, 1.0).transpose()).abs().max() > 1e-9 {
            return Err(HsrError::InvalidCamera("last row must be [0, 0, 0, 1]".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            camera_to_world,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposing image +y.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        intrinsics: [f64; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        m.fixed_view_mut::<3, 1>(0, 1).copy_from(&down);
        m.fixed_view_mut::<3, 1>(0, 2).copy_from(&forward);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
        Self::new(intrinsics, m, width, height)
    }

    pub fn intrinsics(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    pub fn center(&self) -> Vec3 {
        self.camera_to_world.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.camera_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Unit world-space direction through the centre of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: usize, y: usize) -> Result<Vec3> {
        if x >= self.width || y >= self.height {
            return Err(HsrError::PixelOutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        let u = x as f64 + 0.5;
        let v = y as f64 + 0.5;
        let local = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        Ok((self.rotation() * local).normalize())
    }

    /// The same camera with its centre mapped through `p ↦ (p - offset) · scale`.
    pub fn normalized(&self, scale: f64, offset: Vec3) -> Self {
        let mut m = self.camera_to_world;
        let c = (self.center() - offset) * scale;
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
        Self {
            camera_to_world: m,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Depth interval where `o + t·v` lies inside the origin-centred sphere, or
/// `None` when the ray misses it (tangent rays count as misses). `near` is
/// clamped to zero for origins inside the sphere.
pub fn sphere_clip(origin: &Vec3, direction: &Vec3, radius: f64) -> Option<(f64, f64)> {
    assert!(radius > 0.0, "sphere radius must be positive");
    let b = origin.dot(direction);
    let c = origin.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let far = -b + root;
    if far <= 0.0 {
        return None;
    }
    let near = (-b - root).max(0.0);
    Some((near, far))
}

/// Rays through the given pixels, clipped to the sphere of `radius`.
/// Pixels whose ray misses the sphere yield `None`.
pub fn generate_rays(
    camera: &Camera,
    pixels: &[(usize, usize)],
    radius: f64,
) -> Result<Vec<Option<Ray>>> {
    let origin = camera.center();
    pixels
        .iter()
        .map(|&(x, y)| {
            let direction = camera.pixel_direction(x, y)?;
            Ok(sphere_clip(&origin, &direction, radius).map(|(near, far)| Ray {
                origin,
                direction,
                near,
                far,
            }))
        })
        .collect()
}

/// Plane `A·x + B·y + C·z + D = 0` with unit normal `(A, B, C)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxiliaryPlane {
    pub normal: Vec3,
    /// Distance along the owning ray at which it meets the plane.
    pub depth: f64,
    pub offset: f64,
}

impl AuxiliaryPlane {
    /// Plane crossing the ray `t·v` at `t = depth`, so `D = -depth · (n·v)`.
    pub fn from_ray(normal: Vec3, depth: f64, direction: &Vec3) -> Result<Self> {
        let normal = unit_normal(normal)?;
        Ok(Self {
            normal,
            depth,
            offset: -depth * normal.dot(direction),
        })
    }

    /// Plane from raw coefficients; `(A, B, C)` is normalized and `D` scaled with it.
    pub fn from_coefficients(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let n = Vec3::new(a, b, c);
        let len = n.norm();
        let normal = unit_normal(n)?;
        Ok(Self {
            normal,
            depth: f64::NAN,
            offset: d / len,
        })
    }

    pub fn coefficients(&self) -> Vector4<f64> {
        Vector4::new(self.normal.x, self.normal.y, self.normal.z, self.offset)
    }

    pub fn signed_distance(&self, point: &Vec3) -> f64 {
        self.normal.dot(point) + self.offset
    }

    /// Mirror image `p - 2 (L·p) N` of `point`.
    pub fn reflect(&self, point: &Vec3) -> Vec3 {
        point - self.normal * (2.0 * self.signed_distance(point))
    }

    /// Homogeneous reflection matrix `M_r`.
    pub fn reflection_matrix(&self) -> Matrix4<f64> {
        let [a, b, c] = [self.normal.x, self.normal.y, self.normal.z];
        let d = self.offset;
        Matrix4::new(
            1.0 - 2.0 * a * a,
            -2.0 * a * b,
            -2.0 * a * c,
            -2.0 * a * d,
            -2.0 * a * b,
            1.0 - 2.0 * b * b,
            -2.0 * b * c,
            -2.0 * b * d,
            -2.0 * a * c,
            -2.0 * b * c,
            1.0 - 2.0 * c * c,
            -2.0 * c * d,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

fn unit_normal(n: Vec3) -> Result<Vec3> {
    let len = n.norm();
    if !(len > 1e-12) || !len.is_finite() {
        return Err(HsrError::DegeneratePlane);
    }
    Ok(n / len)
}

/// Camera-frame sample points for the plane path: samples in front of the
/// plane kept as `p - o`, samples behind it replaced by their mirror image.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePartition {
    /// `p_r` in original sample order.
    pub points: Vec<Vec3>,
    /// `true` where the point was reflected (belongs to `p_a`).
    pub reflected: Vec<bool>,
}

impl SamplePartition {
    pub fn front(&self) -> impl Iterator<Item = &Vec3> {
        self.points
            .iter()
            .zip(&self.reflected)
            .filter(|(_, r)| !**r)
            .map(|(p, _)| p)
    }

    pub fn behind(&self) -> impl Iterator<Item = &Vec3> {
        self.points
            .iter()
            .zip(&self.reflected)
            .filter(|(_, r)| **r)
            .map(|(p, _)| p)
    }
}

/// Splits world samples along `o + t·v` at the plane depth and mirrors the
/// far part. Samples with `t <= plane.depth` stay in front. The reflection
/// uses `M_r` itself as its inverse.
pub fn partition_and_project(
    samples_world: &[Vec3],
    origin: &Vec3,
    direction: &Vec3,
    plane: &AuxiliaryPlane,
) -> SamplePartition {
    let m = plane.reflection_matrix();
    let mut points = Vec::with_capacity(samples_world.len());
    let mut reflected = Vec::with_capacity(samples_world.len());
    for p in samples_world {
        let local = p - origin;
        let t = local.dot(direction);
        if t <= plane.depth {
            points.push(local);
            reflected.push(false);
        } else {
            let h = m * local.push(1.0);
            points.push(h.xyz());
            reflected.push(true);
        }
    }
    SamplePartition { points, reflected }
}
