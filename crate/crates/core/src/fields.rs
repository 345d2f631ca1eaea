//! The trainable fields: signed-distance network, auxiliary-plane network,
//! shared appearance network, the sharpness scalar and a constant
//! background colour.
//!
//! All parameters of one model live in a single [`ParamStore`]; the network
//! structs only hold [`ParamId`]s and know how to build their forward pass on
//! a tape.

use std::f64::consts::{PI, SQRT_2};

use hsr_autodiff::{Bindings, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;

/// Sin/cos features at octave-spaced frequencies `2^k π`, k = 0..L-1,
/// appended after the raw input.
///
/// Layout for a `d`-vector: `[x, sin(πx), cos(πx), sin(2πx), cos(2πx), ...]`
/// where each entry is a `d`-wide block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub frequencies: usize,
}

impl PositionalEncoding {
    pub fn new(frequencies: usize) -> Self {
        Self { frequencies }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (1 + 2 * self.frequencies)
    }

    pub fn encode<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        if self.frequencies == 0 {
            return Ok(x);
        }
        let mut parts = Vec::with_capacity(1 + 2 * self.frequencies);
        parts.push(x);
        for k in 0..self.frequencies {
            let scaled = x.scale(frequency(k));
            parts.push(scaled.sin());
            parts.push(scaled.cos());
        }
        Ok(x.tape().concat(&parts, 1)?)
    }

    /// Pulls a gradient w.r.t. the encoding back to the raw input, given the
    /// encoding itself (whose sin/cos blocks are the needed derivatives).
    pub fn pullback<'t>(&self, grad: Var<'t>, encoded: Var<'t>, input_dim: usize) -> Result<Var<'t>> {
        let d = input_dim;
        let mut acc = grad.slice(1, 0, d)?;
        for k in 0..self.frequencies {
            let sin_at = d * (1 + 2 * k);
            let cos_at = sin_at + d;
            let g_sin = grad.slice(1, sin_at, sin_at + d)?;
            let g_cos = grad.slice(1, cos_at, cos_at + d)?;
            let sin = encoded.slice(1, sin_at, sin_at + d)?;
            let cos = encoded.slice(1, cos_at, cos_at + d)?;
            let term = g_sin.mul(cos)?.sub(g_cos.mul(sin)?)?.scale(frequency(k));
            acc = acc.add(term)?;
        }
        Ok(acc)
    }
}

fn frequency(k: usize) -> Real {
    ((1u64 << k) as f64 * PI) as Real
}

/// Plain-array version of [`PositionalEncoding::encode`] for one vector.
pub fn positional_encode(x: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for k in 0..frequencies {
        let f = (1u64 << k) as f64 * PI;
        out.extend(x.iter().map(|v| (f * v).sin()));
        out.extend(x.iter().map(|v| (f * v).cos()));
    }
    out
}

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` initialization.
    fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w: Vec<Real> = (0..input * output).map(|_| dist.sample(rng) as Real).collect();
        let b: Vec<Real> = (0..output).map(|_| dist.sample(rng) as Real).collect();
        Ok(Self {
            weight: store.insert(format!("{name}.weight"), Tensor::new(vec![input, output], w)?)?,
            bias: store.insert(format!("{name}.bias"), Tensor::new(vec![output], b)?)?,
        })
    }

    fn forward<'t>(&self, vars: &Bindings<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.linear(vars[self.weight], vars[self.bias])?)
    }
}

/// Weight-normalized dense layer, `W[:,j] = g_j V[:,j] / ‖V[:,j]‖`.
#[derive(Clone, Copy, Debug)]
struct NormLinear {
    direction: ParamId,
    gain: ParamId,
    bias: ParamId,
    input: usize,
    output: usize,
}

impl NormLinear {
    fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        // placeholder values; SdfNetwork::geometric_init overwrites them
        Ok(Self {
            direction: store.insert(format!("{name}.v"), Tensor::ones(vec![input, output]))?,
            gain: store.insert(format!("{name}.g"), Tensor::ones(vec![output]))?,
            bias: store.insert(format!("{name}.b"), Tensor::zeros(vec![output]))?,
            input,
            output,
        })
    }

    fn weight<'t>(&self, vars: &Bindings<'t>) -> Result<Var<'t>> {
        Ok(vars[self.direction].weight_norm(vars[self.gain])?)
    }

    /// Sets `V` and `b`, with gains equal to the column norms so that `W = V`.
    fn assign(&self, store: &mut ParamStore, v: Vec<Real>, b: Vec<Real>) {
        let mut gains = vec![0.0; self.output];
        for i in 0..self.input {
            for j in 0..self.output {
                gains[j] += v[i * self.output + j] * v[i * self.output + j];
            }
        }
        gains.iter_mut().for_each(|g| *g = g.sqrt());
        store.value_mut(self.direction).data_mut().copy_from_slice(&v);
        store.value_mut(self.gain).data_mut().copy_from_slice(&gains);
        store.value_mut(self.bias).data_mut().copy_from_slice(&b);
    }
}

pub const SDF_LAYERS: usize = 8;
pub const SDF_SKIP_LAYER: usize = 4;

/// Eight weight-normalized layers with softplus activations and the encoded
/// input re-injected before layer four. Output column 0 is the signed
/// distance, the remaining columns are the feature vector.
#[derive(Clone, Debug)]
pub struct SdfNetwork {
    layers: Vec<NormLinear>,
    encoding: PositionalEncoding,
    width: usize,
    feature_width: usize,
    beta: Real,
}

/// Result of one SDF evaluation over `N` points.
pub struct SdfOutput<'t> {
    /// `[N, 1]`
    pub sdf: Var<'t>,
    /// `[N, F]`
    pub features: Var<'t>,
    /// `[N, 3]`, ∇f w.r.t. the raw point, when requested.
    pub gradient: Option<Var<'t>>,
}

impl SdfNetwork {
    pub fn new(
        store: &mut ParamStore,
        width: usize,
        feature_width: usize,
        encoding: PositionalEncoding,
        beta: Real,
    ) -> Result<Self> {
        let d_in = encoding.output_dim(3);
        let mut layers = Vec::with_capacity(SDF_LAYERS);
        for l in 0..SDF_LAYERS {
            let input = match l {
                0 => d_in,
                SDF_SKIP_LAYER => width + d_in,
                _ => width,
            };
            let output = if l == SDF_LAYERS - 1 { 1 + feature_width } else { width };
            layers.push(NormLinear::new(store, &format!("sdf.l{l}"), input, output)?);
        }
        Ok(Self {
            layers,
            encoding,
            width,
            feature_width,
            beta,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn encoding(&self) -> PositionalEncoding {
        self.encoding
    }

    /// Initializes the weights so that `f(p) ≈ ‖p‖ - radius`: Gaussian hidden
    /// layers, zero weights on the sin/cos encoding columns, and a nearly
    /// constant positive output layer with bias `-radius`.
    pub fn geometric_init(&self, store: &mut ParamStore, radius: f64, rng: &mut impl Rng) {
        let d_in = self.encoding.output_dim(3);
        for (l, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = (layer.input, layer.output);
            let mut v = vec![0.0 as Real; rows * cols];
            let mut b = vec![0.0 as Real; cols];
            if l == SDF_LAYERS - 1 {
                let mean = PI.sqrt() / (rows as f64).sqrt();
                let dist = Normal::new(mean, 1e-4).expect("valid normal");
                v.iter_mut().for_each(|x| *x = dist.sample(rng) as Real);
                b.iter_mut().for_each(|x| *x = -radius as Real);
            } else {
                let dist = Normal::new(0.0, SQRT_2 / (cols as f64).sqrt()).expect("valid normal");
                // rows that receive the raw xyz (or hidden units); encoded
                // frequency rows stay zero
                let active = |row: usize| match l {
                    0 => row < 3,
                    SDF_SKIP_LAYER => row < self.width + 3,
                    _ => true,
                };
                for row in 0..rows {
                    if active(row) {
                        for c in 0..cols {
                            v[row * cols + c] = dist.sample(rng) as Real;
                        }
                    }
                }
                debug_assert!(l != 0 || rows == d_in);
            }
            layer.assign(store, v, b);
        }
    }

    /// Evaluates the field at raw points `[N, 3]`, optionally with ∇f.
    ///
    /// The gradient is built from differentiable ops (a hand-written reverse
    /// sweep through the layers), so losses on it can themselves be
    /// differentiated w.r.t. the parameters.
    pub fn forward<'t>(&self, vars: &Bindings<'t>, points: Var<'t>, with_gradient: bool) -> Result<SdfOutput<'t>> {
        let encoded = self.encoding.encode(points)?;
        let tape = points.tape();
        let inv_sqrt2 = (1.0 / SQRT_2) as Real;
        let mut weights = Vec::with_capacity(SDF_LAYERS);
        let mut pre_activations = Vec::with_capacity(SDF_LAYERS - 1);
        let mut h = encoded;
        let mut out = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == SDF_SKIP_LAYER {
                tape.concat(&[h, encoded], 1)?.scale(inv_sqrt2)
            } else {
                h
            };
            let w = layer.weight(vars)?;
            weights.push(w);
            let z = input.linear(w, vars[layer.bias])?;
            if l + 1 < SDF_LAYERS {
                pre_activations.push(z);
                h = z.softplus(self.beta);
            } else {
                out = Some(z);
            }
        }
        let out = out.expect("at least one layer");
        let sdf = out.slice(1, 0, 1)?;
        let features = out.slice(1, 1, 1 + self.feature_width)?;

        let gradient = if with_gradient {
            let n = points.shape()[0];
            let last = weights[SDF_LAYERS - 1];
            let last_in = last.shape()[0];
            let mut g = last
                .slice(1, 0, 1)?
                .reshape(&[1, last_in])?
                .broadcast_to(&[n, last_in])?;
            let mut g_encoded = None;
            for l in (0..SDF_LAYERS - 1).rev() {
                let act_grad = pre_activations[l].scale(self.beta).sigmoid();
                let g_z = g.mul(act_grad)?;
                let g_in = g_z.matmul_t(weights[l])?;
                if l == SDF_SKIP_LAYER {
                    let total = g_in.shape()[1];
                    g = g_in.slice(1, 0, self.width)?.scale(inv_sqrt2);
                    g_encoded = Some(g_in.slice(1, self.width, total)?.scale(inv_sqrt2));
                } else if l == 0 {
                    let skip = g_encoded.expect("skip layer precedes layer 0 in reverse");
                    g_encoded = Some(g_in.add(skip)?);
                } else {
                    g = g_in;
                }
            }
            let g_encoded = g_encoded.expect("set at layer 0");
            Some(self.encoding.pullback(g_encoded, encoded, 3)?)
        } else {
            None
        };
        Ok(SdfOutput {
            sdf,
            features,
            gradient,
        })
    }
}

/// Which parts of the auxiliary-plane path are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneOptions {
    pub enabled: bool,
    /// Predict `d_r`, `n_r` and project samples behind the plane.
    pub attributes: bool,
    /// Predict `σ_r`; otherwise the plane path reuses the object weights.
    pub density: bool,
}

impl Default for PlaneOptions {
    fn default() -> Self {
        Self {
            enabled: true,
            attributes: true,
            density: true,
        }
    }
}

impl PlaneOptions {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            attributes: false,
            density: false,
        }
    }

    pub fn uses_attributes(&self) -> bool {
        self.enabled && self.attributes
    }

    pub fn uses_density(&self) -> bool {
        self.enabled && self.density
    }
}

/// Auxiliary-plane network: a 3-layer density branch evaluated per sample
/// and two 2-layer attribute heads (position via sigmoid, normal via tanh)
/// evaluated per ray.
#[derive(Clone, Debug)]
pub struct PlaneNetwork {
    density: Option<[Linear; 3]>,
    position: Option<[Linear; 2]>,
    normal: Option<[Linear; 2]>,
    depth_encoding: PositionalEncoding,
}

impl PlaneNetwork {
    pub fn new(
        store: &mut ParamStore,
        options: PlaneOptions,
        direction_dim: usize,
        depth_encoding: PositionalEncoding,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let density = if options.uses_density() {
            let input = direction_dim + depth_encoding.output_dim(1);
            Some([
                Linear::new(store, "plane.density.l0", input, width, rng)?,
                Linear::new(store, "plane.density.l1", width, width, rng)?,
                Linear::new(store, "plane.density.l2", width, 1, rng)?,
            ])
        } else {
            None
        };
        let (position, normal) = if options.uses_attributes() {
            (
                Some([
                    Linear::new(store, "plane.position.l0", direction_dim, width, rng)?,
                    Linear::new(store, "plane.position.l1", width, 1, rng)?,
                ]),
                Some([
                    Linear::new(store, "plane.normal.l0", direction_dim, width, rng)?,
                    Linear::new(store, "plane.normal.l1", width, 3, rng)?,
                ]),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            density,
            position,
            normal,
            depth_encoding,
        })
    }

    pub fn depth_encoding(&self) -> PositionalEncoding {
        self.depth_encoding
    }

    /// Per-sample `σ_r ≥ 0` from encoded view directions `[S, dv]` and
    /// normalized depths `[S, 1]`. `None` when the density branch is disabled.
    pub fn density<'t>(
        &self,
        vars: &Bindings<'t>,
        direction_encoded: Var<'t>,
        depth: Var<'t>,
    ) -> Result<Option<Var<'t>>> {
        let Some([l0, l1, l2]) = &self.density else {
            return Ok(None);
        };
        let depth_encoded = self.depth_encoding.encode(depth)?;
        let x = direction_encoded.tape().concat(&[direction_encoded, depth_encoded], 1)?;
        let h = l0.forward(vars, x)?.relu();
        let h = l1.forward(vars, h)?.relu();
        Ok(Some(l2.forward(vars, h)?.softplus(1.0)))
    }

    /// Per-ray `(d_r ∈ (0,1), raw n_r ∈ (-1,1)^3)` from encoded directions `[R, dv]`.
    pub fn attributes<'t>(
        &self,
        vars: &Bindings<'t>,
        direction_encoded: Var<'t>,
    ) -> Result<Option<(Var<'t>, Var<'t>)>> {
        let (Some([p0, p1]), Some([n0, n1])) = (&self.position, &self.normal) else {
            return Ok(None);
        };
        let position = p1
            .forward(vars, p0.forward(vars, direction_encoded)?.relu())?
            .sigmoid();
        let normal = n1
            .forward(vars, n0.forward(vars, direction_encoded)?.relu())?
            .tanh();
        Ok(Some((position, normal)))
    }
}

/// Colour network shared by both paths: `(point, normal, encoded view
/// direction, SDF feature) ↦ rgb ∈ (0,1)^3`.
#[derive(Clone, Debug)]
pub struct AppearanceNetwork {
    layers: [Linear; 4],
}

impl AppearanceNetwork {
    pub fn new(
        store: &mut ParamStore,
        direction_dim: usize,
        feature_width: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let input = 3 + 3 + direction_dim + feature_width;
        Ok(Self {
            layers: [
                Linear::new(store, "color.l0", input, width, rng)?,
                Linear::new(store, "color.l1", width, width, rng)?,
                Linear::new(store, "color.l2", width, width, rng)?,
                Linear::new(store, "color.l3", width, 3, rng)?,
            ],
        })
    }

    /// All inputs are `[N, ·]` with matching row counts.
    pub fn forward<'t>(
        &self,
        vars: &Bindings<'t>,
        points: Var<'t>,
        normals: Var<'t>,
        direction_encoded: Var<'t>,
        features: Var<'t>,
    ) -> Result<Var<'t>> {
        let x = points
            .tape()
            .concat(&[points, normals, direction_encoded, features], 1)?;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(vars, h)?;
            h = if i + 1 < self.layers.len() { h.relu() } else { h.sigmoid() };
        }
        Ok(h)
    }
}

/// Network sizes and encoding settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfig {
    pub sdf_width: usize,
    pub feature_width: usize,
    pub plane_width: usize,
    pub color_width: usize,
    pub point_frequencies: usize,
    pub direction_frequencies: usize,
    pub depth_frequencies: usize,
    pub softplus_beta: f64,
    pub init_radius: f64,
    pub init_sharpness: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            sdf_width: 256,
            feature_width: 256,
            plane_width: 256,
            color_width: 256,
            point_frequencies: 6,
            direction_frequencies: 4,
            depth_frequencies: 4,
            softplus_beta: 100.0,
            init_radius: 0.5,
            init_sharpness: 20.0,
        }
    }
}

impl FieldConfig {
    /// Width-64 networks for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            sdf_width: 64,
            feature_width: 64,
            plane_width: 64,
            color_width: 64,
            ..Self::default()
        }
    }
}

/// Every trainable quantity of one model.
#[derive(Clone, Debug)]
pub struct FieldSet {
    pub config: FieldConfig,
    pub plane_options: PlaneOptions,
    pub params: ParamStore,
    pub sdf: SdfNetwork,
    pub plane: Option<PlaneNetwork>,
    pub color: AppearanceNetwork,
    pub direction_encoding: PositionalEncoding,
    /// `ln s`
    pub log_sharpness: ParamId,
    /// Background colour logits.
    pub background: ParamId,
}

impl FieldSet {
    /// Builds all networks and applies geometric initialization.
    pub fn new(config: FieldConfig, plane_options: PlaneOptions, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let point_encoding = PositionalEncoding::new(config.point_frequencies);
        let direction_encoding = PositionalEncoding::new(config.direction_frequencies);
        let direction_dim = direction_encoding.output_dim(3);
        let sdf = SdfNetwork::new(
            &mut params,
            config.sdf_width,
            config.feature_width,
            point_encoding,
            config.softplus_beta as Real,
        )?;
        sdf.geometric_init(&mut params, config.init_radius, rng);
        let plane = if plane_options.enabled {
            Some(PlaneNetwork::new(
                &mut params,
                plane_options,
                direction_dim,
                PositionalEncoding::new(config.depth_frequencies),
                config.plane_width,
                rng,
            )?)
        } else {
            None
        };
        let color = AppearanceNetwork::new(
            &mut params,
            direction_dim,
            config.feature_width,
            config.color_width,
            rng,
        )?;
        let log_sharpness = params.insert(
            "sharpness.log",
            Tensor::new(vec![1], vec![config.init_sharpness.ln() as Real])?,
        )?;
        let background = params.insert("background.logit", Tensor::zeros(vec![3]))?;
        Ok(Self {
            config,
            plane_options,
            params,
            sdf,
            plane,
            color,
            direction_encoding,
            log_sharpness,
            background,
        })
    }

    /// Current sharpness `s = exp(ln s) > 0`.
    pub fn sharpness(&self) -> f64 {
        (self.params.value(self.log_sharpness).item() as f64).exp()
    }

    /// Current background colour in (0,1)^3.
    pub fn background_color(&self) -> [f64; 3] {
        let d = self.params.value(self.background).data();
        [0, 1, 2].map(|i| 1.0 / (1.0 + (-(d[i] as f64)).exp()))
    }

    /// Signed distances at `points` without building a gradient chain.
    pub fn sdf_values(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let x = tape.constant(points_tensor(points)?);
        let out = self.sdf.forward(&vars, x, false)?;
        let values = out.sdf.value();
        Ok(values.data().iter().map(|&v| v as f64).collect())
    }

    /// Signed distances and gradients at `points`.
    pub fn sdf_with_gradient(&self, points: &[[f64; 3]]) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let x = tape.constant(points_tensor(points)?);
        let out = self.sdf.forward(&vars, x, true)?;
        let sdf = out.sdf.value().data().iter().map(|&v| v as f64).collect();
        let g = out.gradient.expect("requested").value();
        let grads = g
            .data()
            .chunks(3)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect();
        Ok((sdf, grads))
    }
}

pub(crate) fn points_tensor(points: &[[f64; 3]]) -> Result<Tensor> {
    let data = points.iter().flat_map(|p| p.iter().map(|&v| v as Real)).collect();
    Ok(Tensor::new(vec![points.len(), 3], data)?)
}
