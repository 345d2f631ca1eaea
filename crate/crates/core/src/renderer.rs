//! Ray sampling, the two rendering paths and their fusion.
//!
//! The object path weights samples with the occlusion-aware SDF weights; the
//! plane path weights them with a learned density and colours them at the
//! reflected points. Sampling runs on plain floats; [`render_batch`] builds
//! the differentiable graph for a batch of already-sampled rays.

use hsr_autodiff::{Bindings, Real, Tape, Tensor, Var};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{HsrError, Result};
use crate::fields::{points_tensor, FieldSet};
use crate::geometry::{generate_rays, Camera, Ray, Vec3};

/// Lower bound on `Θ_s(f_i)` in the α denominator.
pub const THETA_FLOOR: f64 = 1e-7;

/// Logistic CDF `Θ_s(x) = 1 / (1 + e^{-s x})`.
pub fn logistic_cdf(x: f64, s: f64) -> f64 {
    1.0 / (1.0 + (-s * x).exp())
}

/// Discrete opacities from SDF values at `n` consecutive depths; returns `n-1` values.
pub fn object_alphas(sdf: &[f64], s: f64) -> Vec<f64> {
    sdf.windows(2)
        .map(|w| {
            let a = logistic_cdf(w[0], s);
            let b = logistic_cdf(w[1], s);
            ((a - b) / a.max(THETA_FLOOR)).max(0.0)
        })
        .collect()
}

/// Object-path weights `w_i = α_i Π_{j<i}(1 - α_j)` for the `n-1` intervals
/// between consecutive SDF values.
pub fn object_weights(sdf: &[f64], s: f64) -> Vec<f64> {
    compose_alphas(&object_alphas(sdf, s))
}

fn compose_alphas(alphas: &[f64]) -> Vec<f64> {
    let mut transmittance = 1.0;
    alphas
        .iter()
        .map(|&a| {
            let w = a * transmittance;
            transmittance *= 1.0 - a;
            w
        })
        .collect()
}

/// Plane-path weights `exp(-Σ_{j<i} σ_j δ_j) (1 - exp(-σ_i δ_i))`.
pub fn plane_weights(sigma: &[f64], delta: &[f64]) -> Vec<f64> {
    let mut optical = 0.0f64;
    sigma
        .iter()
        .zip(delta)
        .map(|(&s, &d)| {
            let w = (-optical).exp() * (1.0 - (-s * d).exp());
            optical += s * d;
            w
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    pub coarse: usize,
    pub rounds: usize,
    pub per_round: usize,
    /// Sharpness used in the first importance round; doubled each round.
    pub base_sharpness: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            coarse: 64,
            rounds: 4,
            per_round: 16,
            base_sharpness: 32.0,
        }
    }
}

impl SamplingConfig {
    pub fn total(&self) -> usize {
        self.coarse + self.rounds * self.per_round
    }
}

/// Sorted sample depths for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub depths: Vec<f64>,
}

impl RaySamples {
    /// `δ_i = t_{i+1} - t_i`, with the last interval closed at `far`.
    pub fn deltas(&self, far: f64) -> Vec<f64> {
        let n = self.depths.len();
        (0..n)
            .map(|i| {
                let next = if i + 1 < n { self.depths[i + 1] } else { far };
                next - self.depths[i]
            })
            .collect()
    }
}

/// One sample per equal-width bin of `[near, far]`: jittered when `rng` is
/// given, bin centres otherwise.
pub fn stratified_depths(near: f64, far: f64, count: usize, rng: Option<&mut dyn rand::RngCore>) -> Vec<f64> {
    let width = (far - near) / count as f64;
    match rng {
        Some(rng) => (0..count)
            .map(|i| near + (i as f64 + rng.random::<f64>()) * width)
            .collect(),
        None => (0..count).map(|i| near + (i as f64 + 0.5) * width).collect(),
    }
}

/// Inverse-CDF draws from piecewise-constant weights on the intervals
/// between consecutive `depths`. Falls back to interval-length weights when
/// all weights vanish.
pub fn sample_from_weights(
    depths: &[f64],
    weights: &[f64],
    count: usize,
    rng: Option<&mut dyn rand::RngCore>,
) -> Vec<f64> {
    debug_assert_eq!(weights.len() + 1, depths.len());
    let total: f64 = weights.iter().sum();
    let mass: Vec<f64> = if total > 1e-12 && total.is_finite() {
        weights.to_vec()
    } else {
        depths.windows(2).map(|w| w[1] - w[0]).collect()
    };
    let total: f64 = mass.iter().sum();
    let mut cdf = Vec::with_capacity(mass.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &mass {
        acc += m / total;
        cdf.push(acc);
    }
    let us: Vec<f64> = match rng {
        Some(rng) => (0..count).map(|_| rng.random::<f64>()).collect(),
        None => (0..count).map(|j| (j as f64 + 0.5) / count as f64).collect(),
    };
    us.into_iter()
        .map(|u| {
            let u = u * acc;
            // first bin whose upper CDF exceeds u, skipping empty bins
            let mut bin = cdf.partition_point(|&c| c <= u).saturating_sub(1);
            bin = bin.min(mass.len() - 1);
            while mass[bin] <= 0.0 && bin + 1 < mass.len() {
                bin += 1;
            }
            let span = cdf[bin + 1] - cdf[bin];
            let frac = if span > 0.0 { ((u - cdf[bin]) / span).clamp(1e-6, 1.0 - 1e-6) } else { 0.5 };
            depths[bin] + frac * (depths[bin + 1] - depths[bin])
        })
        .collect()
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn rand::RngCore>) -> Option<&'a mut dyn rand::RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn enforce_increasing(depths: &mut [f64], near: f64, far: f64) {
    let eps = (far - near) * 1e-9;
    for i in 1..depths.len() {
        if depths[i] <= depths[i - 1] {
            depths[i] = depths[i - 1] + eps;
        }
    }
}

/// Stratified coarse samples followed by importance rounds driven by the
/// object-path weights, for every ray at once.
///
/// `rng = None` gives deterministic bin-centre sampling.
pub fn sample_hierarchical(
    fields: &FieldSet,
    rays: &[Ray],
    config: &SamplingConfig,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> Result<Vec<RaySamples>> {
    for ray in rays {
        if !(ray.far > ray.near) {
            return Err(HsrError::DegenerateRay {
                near: ray.near,
                far: ray.far,
            });
        }
    }
    let mut depths: Vec<Vec<f64>> = rays
        .iter()
        .map(|r| stratified_depths(r.near, r.far, config.coarse, reborrow(&mut rng)))
        .collect();
    if config.rounds == 0 || rays.is_empty() {
        return Ok(depths.into_iter().map(|d| RaySamples { depths: d }).collect());
    }
    let mut sdf = batched_sdf(fields, rays, &depths)?;
    for round in 0..config.rounds {
        let s = config.base_sharpness * (1u64 << round) as f64;
        let mut proposals = Vec::with_capacity(rays.len());
        for i in 0..rays.len() {
            let weights = object_weights(&sdf[i], s);
            proposals.push(sample_from_weights(
                &depths[i],
                &weights,
                config.per_round,
                reborrow(&mut rng),
            ));
        }
        let new_sdf = if round + 1 < config.rounds {
            Some(batched_sdf(fields, rays, &proposals)?)
        } else {
            None
        };
        for (i, ray) in rays.iter().enumerate() {
            match &new_sdf {
                Some(new_sdf) => {
                    let mut pairs: Vec<(f64, f64)> = depths[i]
                        .iter()
                        .copied()
                        .zip(sdf[i].iter().copied())
                        .chain(proposals[i].iter().copied().zip(new_sdf[i].iter().copied()))
                        .collect();
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                    depths[i] = pairs.iter().map(|p| p.0).collect();
                    sdf[i] = pairs.iter().map(|p| p.1).collect();
                }
                None => {
                    depths[i].append(&mut proposals[i]);
                    depths[i].sort_by(f64::total_cmp);
                }
            }
            enforce_increasing(&mut depths[i], ray.near, ray.far);
        }
    }
    Ok(depths.into_iter().map(|d| RaySamples { depths: d }).collect())
}

fn batched_sdf(fields: &FieldSet, rays: &[Ray], depths: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let points: Vec<[f64; 3]> = rays
        .iter()
        .zip(depths)
        .flat_map(|(r, d)| d.iter().map(move |&t| r.at(t).into()))
        .collect();
    let values = fields.sdf_values(&points)?;
    let mut out = Vec::with_capacity(rays.len());
    let mut offset = 0;
    for d in depths {
        out.push(values[offset..offset + d.len()].to_vec());
        offset += d.len();
    }
    Ok(out)
}

/// Differentiable outputs for `R` rays with `m` samples each.
pub struct BatchRender<'t> {
    /// Fused colour `[R, 3]`.
    pub color: Var<'t>,
    /// `Σ w_i c_t,i`, `[R, 3]`.
    pub object_color: Var<'t>,
    /// `Σ w_r,i c_r,i`, `[R, 3]`; `None` without the plane path.
    pub plane_color: Option<Var<'t>>,
    /// Object weights `[R, m]`.
    pub object_weights: Var<'t>,
    /// Plane weights `[R, m]`.
    pub plane_weights: Option<Var<'t>>,
    /// `∇f` at every sample, `[R*m, 3]`.
    pub sdf_gradient: Var<'t>,
    /// Raw attribute-branch normal `[R, 3]`.
    pub plane_normal_raw: Option<Var<'t>>,
    /// Unit, camera-facing plane normal `[R, 3]`.
    pub plane_normal: Option<Var<'t>>,
    /// Plane position in per-ray normalized depth, `[R, 1]`.
    pub plane_depth: Option<Var<'t>>,
    /// Background colour `[3]`.
    pub background: Var<'t>,
}

/// Builds the full two-path render for rays that all carry the same number
/// of samples. `phi` are the fusion ratios of the object and plane paths.
pub fn render_batch<'t>(
    fields: &FieldSet,
    vars: &Bindings<'t>,
    tape: &'t Tape,
    rays: &[Ray],
    samples: &[RaySamples],
    phi: (f64, f64),
) -> Result<BatchRender<'t>> {
    if rays.len() != samples.len() {
        return Err(HsrError::CountMismatch {
            what: "ray/sample",
            left: rays.len(),
            right: samples.len(),
        });
    }
    let r = rays.len();
    let m = samples.first().map_or(0, |s| s.depths.len());
    if let Some(bad) = samples.iter().find(|s| s.depths.len() != m) {
        return Err(HsrError::CountMismatch {
            what: "per-ray sample",
            left: m,
            right: bad.depths.len(),
        });
    }
    let feature_width = fields.sdf.feature_width();

    // SDF at m samples plus the far endpoint of each ray
    let mut points = Vec::with_capacity(r * (m + 1));
    for (ray, s) in rays.iter().zip(samples) {
        for &t in &s.depths {
            points.push(ray.at(t).into());
        }
        points.push(ray.at(ray.far).into());
    }
    let x = tape.constant(points_tensor(&points)?);
    let sdf_out = fields.sdf.forward(vars, x, true)?;
    let sdf = sdf_out.sdf.reshape(&[r, m + 1])?;
    let at_samples = |v: Var<'t>, width: usize| -> Result<Var<'t>> {
        Ok(v.reshape(&[r, m + 1, width])?
            .slice(1, 0, m)?
            .reshape(&[r * m, width])?)
    };
    let gradient = at_samples(sdf_out.gradient.expect("requested"), 3)?;
    let features = at_samples(sdf_out.features, feature_width)?;
    let sample_points = at_samples(x, 3)?;

    // object weights
    let sharpness = vars[fields.log_sharpness].exp();
    let theta = sdf.mul(sharpness)?.sigmoid();
    let prev = theta.slice(1, 0, m)?;
    let next = theta.slice(1, 1, m + 1)?;
    let alpha = prev
        .sub(next)?
        .div(prev.clamp_min(THETA_FLOOR as Real))?
        .clamp_min(0.0);
    let object_weights = alpha.mul(alpha.one_minus().cumprod_exclusive())?;

    let directions: Vec<[f64; 3]> = rays.iter().map(|ray| ray.direction.into()).collect();
    let dirs = tape.constant(points_tensor(&directions)?);
    let dir_enc = fields.direction_encoding.encode(dirs)?;
    let dv = dir_enc.shape()[1];
    let per_sample = |v: Var<'t>, width: usize| -> Result<Var<'t>> {
        Ok(v.reshape(&[r, 1, width])?
            .broadcast_to(&[r, m, width])?
            .reshape(&[r * m, width])?)
    };
    let dir_enc_samples = per_sample(dir_enc, dv)?;

    let object_rgb = fields
        .color
        .forward(vars, sample_points, gradient, dir_enc_samples, features)?;
    let object_color = accumulate(object_weights, object_rgb, r, m)?;

    let background = vars[fields.background].sigmoid();
    let object_mass = object_weights.sum_axis(1)?;

    let Some(plane) = fields.plane.as_ref() else {
        let color = object_color.add(object_mass.one_minus().mul(background)?)?;
        return Ok(BatchRender {
            color,
            object_color,
            plane_color: None,
            object_weights,
            plane_weights: None,
            sdf_gradient: gradient,
            plane_normal_raw: None,
            plane_normal: None,
            plane_depth: None,
            background,
        });
    };

    // camera-frame samples p' = t v
    let mut local = Vec::with_capacity(r * m * 3);
    let mut normalized_depth = Vec::with_capacity(r * m);
    let mut near_far = Vec::with_capacity(r * 2);
    for (ray, s) in rays.iter().zip(samples) {
        for &t in &s.depths {
            local.extend((ray.direction * t).iter().map(|&v| v as Real));
            normalized_depth.push(((t - ray.near) / (ray.far - ray.near)) as Real);
        }
        near_far.push((ray.near, ray.far));
    }
    let local = tape.constant(Tensor::new(vec![r, m, 3], local)?);

    let attributes = plane.attributes(vars, dir_enc)?;
    let (plane_points, plane_normals, plane_normal_raw, plane_normal, plane_depth) = match attributes {
        Some((depth, raw)) => {
            let norm = raw.square().sum_axis(1)?.sqrt();
            let unit = raw.div(norm)?;
            let (unit_values, dir_values) = (unit.value(), dirs.value());
            let flip: Vec<Real> = (0..r)
                .map(|i| {
                    let dot: Real = (0..3)
                        .map(|k| unit_values.data()[i * 3 + k] * dir_values.data()[i * 3 + k])
                        .sum();
                    if dot > 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect();
            let n = unit.mul(tape.constant(Tensor::new(vec![r, 1], flip)?))?;

            let span: Vec<Real> = near_far.iter().map(|&(a, b)| (b - a) as Real).collect();
            let near: Vec<Real> = near_far.iter().map(|&(a, _)| a as Real).collect();
            let world_depth = depth
                .mul(tape.constant(Tensor::new(vec![r, 1], span)?))?
                .add(tape.constant(Tensor::new(vec![r, 1], near)?))?;
            let n_dot_v = n.mul(dirs)?.sum_axis(1)?;
            let offset = world_depth.mul(n_dot_v)?.neg();

            let depth_values = depth.value();
            let mut behind = Vec::with_capacity(r * m);
            for i in 0..r {
                let d = depth_values.data()[i];
                behind.extend(
                    normalized_depth[i * m..(i + 1) * m]
                        .iter()
                        .map(|&t| if t > d { 1.0 } else { 0.0 as Real }),
                );
            }
            let behind = tape.constant(Tensor::new(vec![r, m, 1], behind)?);

            let n3 = n.reshape(&[r, 1, 3])?;
            let distance = local
                .mul(n3)?
                .sum_axis(2)?
                .add(offset.reshape(&[r, 1, 1])?)?;
            let shift = behind.mul(distance)?.scale(2.0).mul(n3)?;
            let reflected = local.sub(shift)?.reshape(&[r * m, 3])?;
            (reflected, per_sample(n, 3)?, Some(raw), Some(n), Some(depth))
        }
        None => (local.reshape(&[r * m, 3])?, gradient, None, None, None),
    };

    let plane_rgb = fields
        .color
        .forward(vars, plane_points, plane_normals, dir_enc_samples, features)?;

    let depth_input = tape.constant(Tensor::new(vec![r * m, 1], normalized_depth)?);
    let plane_weights = match plane.density(vars, dir_enc_samples, depth_input)? {
        Some(sigma) => {
            let deltas: Vec<Real> = rays
                .iter()
                .zip(samples)
                .flat_map(|(ray, s)| s.deltas(ray.far))
                .map(|d| d as Real)
                .collect();
            let optical = sigma
                .reshape(&[r, m])?
                .mul(tape.constant(Tensor::new(vec![r, m], deltas)?))?;
            let transmittance = optical.cumsum_exclusive().neg().exp();
            transmittance.mul(optical.neg().exp().one_minus())?
        }
        None => object_weights,
    };
    let plane_color = accumulate(plane_weights, plane_rgb, r, m)?;
    let plane_mass = plane_weights.sum_axis(1)?;

    let (phi1, phi2) = (phi.0 as Real, phi.1 as Real);
    let leftover = object_mass
        .one_minus()
        .scale(phi1)
        .add(plane_mass.one_minus().scale(phi2))?;
    let color = object_color
        .scale(phi1)
        .add(plane_color.scale(phi2))?
        .add(leftover.mul(background)?)?;
    Ok(BatchRender {
        color,
        object_color,
        plane_color: Some(plane_color),
        object_weights,
        plane_weights: Some(plane_weights),
        sdf_gradient: gradient,
        plane_normal_raw,
        plane_normal,
        plane_depth,
        background,
    })
}

/// `Σ_i w_i c_i` for weights `[R, m]` and colours `[R*m, 3]`.
fn accumulate<'t>(weights: Var<'t>, rgb: Var<'t>, r: usize, m: usize) -> Result<Var<'t>> {
    Ok(weights
        .reshape(&[r, m, 1])?
        .mul(rgb.reshape(&[r, m, 3])?)?
        .sum_axis(1)?
        .reshape(&[r, 3])?)
}

/// Full-frame render with per-path components and plane attribute maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub object: Vec<[f64; 3]>,
    pub plane: Vec<[f64; 3]>,
    pub background: [f64; 3],
    /// Normalized plane depth, zero where the ray misses the sphere.
    pub plane_depth: Vec<f64>,
    /// Unit plane normal, zero where unavailable.
    pub plane_normal: Vec<[f64; 3]>,
    /// Per-pixel peak object and plane weight, zero on missed rays.
    pub object_peak: Vec<f64>,
    pub plane_peak: Vec<f64>,
    /// Accumulated object weight per pixel.
    pub object_mass: Vec<f64>,
    pub hit: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub sampling: SamplingConfig,
    pub phi: (f64, f64),
    pub sphere_radius: f64,
    pub chunk: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            phi: (0.3, 0.7),
            sphere_radius: 1.0,
            chunk: 1024,
        }
    }
}

/// Renders every pixel of `camera` deterministically (bin-centre sampling).
pub fn render_image(fields: &FieldSet, camera: &Camera, options: &RenderOptions) -> Result<RenderedImage> {
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    let rays = generate_rays(camera, &pixels, options.sphere_radius)?;
    let background = fields.background_color();
    let n = pixels.len();
    let mut image = RenderedImage {
        width: w,
        height: h,
        color: vec![background; n],
        object: vec![[0.0; 3]; n],
        plane: vec![[0.0; 3]; n],
        background,
        plane_depth: vec![0.0; n],
        plane_normal: vec![[0.0; 3]; n],
        object_peak: vec![0.0; n],
        plane_peak: vec![0.0; n],
        object_mass: vec![0.0; n],
        hit: rays.iter().map(Option::is_some).collect(),
    };
    let hits: Vec<(usize, Ray)> = rays
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect();
    let chunk = options.chunk.max(1);
    let results: Vec<Result<Vec<PixelOut>>> = hits
        .par_chunks(chunk)
        .map(|part| render_chunk(fields, part, options))
        .collect();
    for result in results {
        for px in result? {
            let i = px.index;
            image.color[i] = px.color;
            image.object[i] = px.object;
            image.plane[i] = px.plane;
            image.plane_depth[i] = px.plane_depth;
            image.plane_normal[i] = px.plane_normal;
            image.object_peak[i] = px.object_peak;
            image.plane_peak[i] = px.plane_peak;
            image.object_mass[i] = px.object_mass;
        }
    }
    Ok(image)
}

struct PixelOut {
    index: usize,
    color: [f64; 3],
    object: [f64; 3],
    plane: [f64; 3],
    plane_depth: f64,
    plane_normal: [f64; 3],
    object_peak: f64,
    plane_peak: f64,
    object_mass: f64,
}

fn render_chunk(fields: &FieldSet, part: &[(usize, Ray)], options: &RenderOptions) -> Result<Vec<PixelOut>> {
    let rays: Vec<Ray> = part.iter().map(|(_, r)| *r).collect();
    let samples = sample_hierarchical(fields, &rays, &options.sampling, None)?;
    let tape = Tape::new();
    let vars = fields.params.bind(&tape);
    let out = render_batch(fields, &vars, &tape, &rays, &samples, options.phi)?;
    let m = options.sampling.total();
    let rgb = |v: &Tensor, i: usize| [0, 1, 2].map(|k| v.data()[i * 3 + k] as f64);
    let color = out.color.value();
    let object = out.object_color.value();
    let plane = out.plane_color.map(|v| v.value());
    let depth = out.plane_depth.map(|v| v.value());
    let normal = out.plane_normal.map(|v| v.value());
    let ow = out.object_weights.value();
    let pw = out.plane_weights.map(|v| v.value());
    let peak = |t: &Tensor, i: usize| t.data()[i * m..(i + 1) * m].iter().fold(0.0f64, |a, &b| a.max(b as f64));
    Ok(part
        .iter()
        .enumerate()
        .map(|(i, (index, _))| PixelOut {
            index: *index,
            color: rgb(&color, i),
            object: rgb(&object, i),
            plane: plane.as_ref().map_or([0.0; 3], |p| rgb(p, i)),
            plane_depth: depth.as_ref().map_or(0.0, |d| d.data()[i] as f64),
            plane_normal: normal.as_ref().map_or([0.0; 3], |n| rgb(n, i)),
            object_peak: peak(&ow, i),
            plane_peak: pw.as_ref().map_or(0.0, |p| peak(p, i)),
            object_mass: ow.data()[i * m..(i + 1) * m].iter().map(|&v| v as f64).sum(),
        })
        .collect())
}

/// Convenience for tests and diagnostics: the world point at every sample.
pub fn sample_points(ray: &Ray, samples: &RaySamples) -> Vec<Vec3> {
    samples.depths.iter().map(|&t| ray.at(t)).collect()
}
