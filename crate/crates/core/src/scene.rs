//! Scene parameters, their Gaussian prior, and the procedural morphable model.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{role, Rng};

/// Number of non-coefficient entries in the parameter vector.
pub const POSE_LIGHT_DIM: usize = 10;

/// Offsets of the scalar fields relative to `shape_dim + color_dim`.
pub mod field {
    pub const YAW: usize = 0;
    pub const PITCH: usize = 1;
    pub const ROLL: usize = 2;
    pub const TX: usize = 3;
    pub const TY: usize = 4;
    pub const LOG_DISTANCE: usize = 5;
    pub const LIGHT_AZIMUTH: usize = 6;
    pub const LIGHT_ELEVATION: usize = 7;
    pub const AMBIENT_RAW: usize = 8;
    pub const DIFFUSE_RAW: usize = 9;
}

/// The latent scene description.
///
/// Vector order (see [`SceneParams::to_vector`]): shape coefficients, color
/// coefficients, yaw, pitch, roll, tx, ty, log_distance, light_azimuth,
/// light_elevation, ambient_raw, diffuse_raw.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub shape_coeffs: Vec<f64>,
    pub color_coeffs: Vec<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub tx: f64,
    pub ty: f64,
    pub log_distance: f64,
    pub light_azimuth: f64,
    pub light_elevation: f64,
    pub ambient_raw: f64,
    pub diffuse_raw: f64,
}

impl SceneParams {
    pub fn dim(&self) -> usize {
        self.shape_coeffs.len() + self.color_coeffs.len() + POSE_LIGHT_DIM
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.shape_coeffs);
        v.extend_from_slice(&self.color_coeffs);
        v.extend_from_slice(&[
            self.yaw,
            self.pitch,
            self.roll,
            self.tx,
            self.ty,
            self.log_distance,
            self.light_azimuth,
            self.light_elevation,
            self.ambient_raw,
            self.diffuse_raw,
        ]);
        v
    }

    pub fn from_vector(v: &[f64], shape_dim: usize, color_dim: usize) -> Result<Self> {
        let expected = shape_dim + color_dim + POSE_LIGHT_DIM;
        if v.len() != expected {
            return Err(Error::contract(format!(
                "parameter vector has length {}, expected {expected}",
                v.len()
            )));
        }
        let k = shape_dim + color_dim;
        let s = &v[k..];
        Ok(SceneParams {
            shape_coeffs: v[..shape_dim].to_vec(),
            color_coeffs: v[shape_dim..k].to_vec(),
            yaw: s[field::YAW],
            pitch: s[field::PITCH],
            roll: s[field::ROLL],
            tx: s[field::TX],
            ty: s[field::TY],
            log_distance: s[field::LOG_DISTANCE],
            light_azimuth: s[field::LIGHT_AZIMUTH],
            light_elevation: s[field::LIGHT_ELEVATION],
            ambient_raw: s[field::AMBIENT_RAW],
            diffuse_raw: s[field::DIFFUSE_RAW],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Independent Gaussian prior over every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub coeff_std: f64,
    pub angle_std: f64,
    pub translation_std: f64,
    pub log_distance_mean: f64,
    pub log_distance_std: f64,
    pub light_angle_std: f64,
    pub ambient_mean: f64,
    pub ambient_std: f64,
    pub diffuse_mean: f64,
    pub diffuse_std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            coeff_std: 1.0,
            angle_std: 0.3,
            translation_std: 0.2,
            log_distance_mean: 4.0f64.ln(),
            log_distance_std: 0.1,
            light_angle_std: 0.5,
            ambient_mean: 0.5,
            ambient_std: 0.5,
            diffuse_mean: 0.5,
            diffuse_std: 0.5,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.coeff_std,
            self.angle_std,
            self.translation_std,
            self.log_distance_std,
            self.light_angle_std,
            self.ambient_std,
            self.diffuse_std,
        ];
        if stds.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::contract("prior standard deviations must be positive"))
        }
    }

    /// Prior means in vector order.
    pub fn mean_vector(&self, shape_dim: usize, color_dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; shape_dim + color_dim];
        v.extend_from_slice(&[
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            self.log_distance_mean,
            0.0,
            0.0,
            self.ambient_mean,
            self.diffuse_mean,
        ]);
        v
    }

    /// Prior standard deviations in vector order.
    pub fn std_vector(&self, shape_dim: usize, color_dim: usize) -> Vec<f64> {
        let mut v = vec![self.coeff_std; shape_dim + color_dim];
        v.extend_from_slice(&[
            self.angle_std,
            self.angle_std,
            self.angle_std,
            self.translation_std,
            self.translation_std,
            self.log_distance_std,
            self.light_angle_std,
            self.light_angle_std,
            self.ambient_std,
            self.diffuse_std,
        ]);
        v
    }

    pub fn mean_params(&self, shape_dim: usize, color_dim: usize) -> SceneParams {
        SceneParams::from_vector(&self.mean_vector(shape_dim, color_dim), shape_dim, color_dim)
            .expect("mean vector has the right length")
    }

    /// Draws every field independently, in vector order.
    pub fn sample(&self, rng: &mut Rng, shape_dim: usize, color_dim: usize) -> SceneParams {
        let mean = self.mean_vector(shape_dim, color_dim);
        let std = self.std_vector(shape_dim, color_dim);
        let v: Vec<f64> = mean
            .iter()
            .zip(&std)
            .map(|(m, s)| rng.gaussian(*m, *s))
            .collect();
        SceneParams::from_vector(&v, shape_dim, color_dim).expect("length matches")
    }

    pub fn log_prior(&self, y: &SceneParams) -> Result<f64> {
        self.log_prior_vector(&y.to_vector(), y.shape_coeffs.len(), y.color_coeffs.len())
    }

    pub fn log_prior_vector(&self, v: &[f64], shape_dim: usize, color_dim: usize) -> Result<f64> {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", v[i])));
        }
        let mean = self.mean_vector(shape_dim, color_dim);
        let std = self.std_vector(shape_dim, color_dim);
        if v.len() != mean.len() {
            return Err(Error::contract("parameter vector length mismatch"));
        }
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        Ok(v
            .iter()
            .zip(mean.iter().zip(&std))
            .map(|(x, (m, s))| {
                let z = (x - m) / s;
                -half_ln_2pi - s.ln() - 0.5 * z * z
            })
            .sum())
    }
}

/// Size of the procedural model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Vertices per side of the hemisphere tessellation grid.
    pub grid_resolution: usize,
    pub shape_dim: usize,
    pub color_dim: usize,
    /// Raw random fields generated per basis before orthonormalization.
    pub raw_fields: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid_resolution: 24,
            shape_dim: 10,
            color_dim: 10,
            raw_fields: 16,
        }
    }
}

impl ModelConfig {
    pub fn param_dim(&self) -> usize {
        self.shape_dim + self.color_dim + POSE_LIGHT_DIM
    }
}

/// Linear shape and color model over a fixed triangle mesh.
///
/// Basis vectors are stored flat, `3 * n_vertices` entries in vertex-major
/// xyz (or rgb) order. All stored values are exactly representable as `f32`
/// so the binary model file round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    pub base_vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub base_colors: Vec<[f64; 3]>,
    pub shape_basis: Vec<Vec<f64>>,
    pub color_basis: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Instanced mesh: vertices and per-vertex albedo.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<'a> {
    pub vertices: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub triangles: &'a [[u32; 3]],
}

const ELLIPSOID_SCALE: [f64; 3] = [1.0, 1.3, 0.8];
// Dark enough that albedo times typical illumination (about 1 to 2) rarely clips.
const SKIN_LIGHT: [f64; 3] = [0.62, 0.47, 0.39];
const SKIN_DARK: [f64; 3] = [0.40, 0.28, 0.23];
const FRONT_PATCH_WIDTH: f64 = 0.45;

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn sinusoid_mode(rng: &mut Rng) -> (f64, f64, f64) {
    let (fs, ft) = loop {
        let fs = rng.below(4) as f64;
        let ft = rng.below(4) as f64;
        if fs + ft > 0.0 {
            break (fs, ft);
        }
    };
    (fs, ft, 2.0 * PI * rng.uniform())
}

fn mode_value((fs, ft, phase): (f64, f64, f64), (s, t): (f64, f64)) -> f64 {
    (PI * (fs * s + ft * t) + phase).sin()
}

/// Raw displacement field: per axis, a sum of 1 to 4 sinusoids in surface
/// coordinates `(s, t) in [0,1]^2` with integer half-frequencies in 0..=3.
fn raw_shape_field(rng: &mut Rng, coords: &[(f64, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; coords.len() * 3];
    for c in 0..3 {
        let modes = 1 + rng.below(4);
        for _ in 0..modes {
            let mode = sinusoid_mode(rng);
            let amp = rng.normal();
            for (k, st) in coords.iter().enumerate() {
                out[3 * k + c] += amp * mode_value(mode, *st);
            }
        }
    }
    out
}

/// Raw albedo field: 1 to 4 sinusoids shared by the three channels, each
/// with a common amplitude and a smaller per-channel perturbation, so most of
/// the variation survives conversion to luminance.
fn raw_color_field(rng: &mut Rng, coords: &[(f64, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; coords.len() * 3];
    let modes = 1 + rng.below(4);
    for _ in 0..modes {
        let mode = sinusoid_mode(rng);
        let amp = rng.normal();
        let gains = [0.0; 3].map(|_: f64| amp * (1.0 + 0.3 * rng.normal()));
        for (k, st) in coords.iter().enumerate() {
            let v = mode_value(mode, *st);
            for c in 0..3 {
                out[3 * k + c] += gains[c] * v;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Fields that are
/// numerically dependent on earlier ones are dropped.
fn orthonormalize(raw: Vec<Vec<f64>>, wanted: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(wanted);
    for mut v in raw {
        if basis.len() == wanted {
            break;
        }
        let norm0 = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm0 == 0.0 || norm < 1e-6 * norm0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    if basis.len() < wanted {
        return Err(Error::ModelGeneration(format!(
            "only {} independent {what} fields, need {wanted}",
            basis.len()
        )));
    }
    Ok(basis)
}

/// Builds the model deterministically from `seed`.
pub fn generate_model(seed: u64, config: &ModelConfig) -> Result<MorphableModel> {
    let res = config.grid_resolution;
    if res < 2 {
        return Err(Error::ModelGeneration("grid resolution must be >= 2".into()));
    }
    if config.shape_dim > config.raw_fields || config.color_dim > config.raw_fields {
        return Err(Error::ModelGeneration(format!(
            "basis sizes ({}, {}) exceed the {} raw fields generated",
            config.shape_dim, config.color_dim, config.raw_fields
        )));
    }

    let mut coords = Vec::with_capacity(res * res);
    let mut base_vertices = Vec::with_capacity(res * res);
    let mut base_colors = Vec::with_capacity(res * res);
    let step = 1.0 / (res - 1) as f64;
    for j in 0..res {
        let t = j as f64 * step;
        let elevation = -PI / 2.0 + PI * t;
        for i in 0..res {
            let s = i as f64 * step;
            let azimuth = -PI / 2.0 + PI * s;
            // Front hemisphere faces the camera, i.e. -z.
            let p = [
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
                -elevation.cos() * azimuth.cos(),
            ];
            base_vertices.push([
                round_f32(p[0] * ELLIPSOID_SCALE[0]),
                round_f32(p[1] * ELLIPSOID_SCALE[1]),
                round_f32(p[2] * ELLIPSOID_SCALE[2]),
            ]);
            // Light patch around the front pole fading toward the rim, plus a
            // weak top-to-bottom gradient. The patch moves with head rotation
            // but not with translation, which keeps yaw and pitch observable.
            let cos_front = elevation.cos() * azimuth.cos();
            let angle = cos_front.clamp(-1.0, 1.0).acos();
            let w = 0.8 * (-angle * angle / (2.0 * FRONT_PATCH_WIDTH * FRONT_PATCH_WIDTH)).exp()
                + 0.2 * t;
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = round_f32(SKIN_DARK[k] + (SKIN_LIGHT[k] - SKIN_DARK[k]) * w);
            }
            base_colors.push(c);
            coords.push((s, t));
        }
    }

    // Counter-clockwise as seen from outside, so the geometric normal
    // (v1 - v0) x (v2 - v0) points away from the ellipsoid center.
    let mut triangles = Vec::with_capacity(2 * (res - 1) * (res - 1));
    let idx = |i: usize, j: usize| (j * res + i) as u32;
    for j in 0..res - 1 {
        for i in 0..res - 1 {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([a, c, b]);
            triangles.push([b, c, d]);
        }
    }

    let mut rng = Rng::stream(seed, role::MODEL, 0);
    let shape_raw: Vec<Vec<f64>> = (0..config.raw_fields)
        .map(|_| raw_shape_field(&mut rng, &coords))
        .collect();
    let color_raw: Vec<Vec<f64>> = (0..config.raw_fields)
        .map(|_| raw_color_field(&mut rng, &coords))
        .collect();
    let round_all = |b: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        b.into_iter()
            .map(|v| v.into_iter().map(round_f32).collect())
            .collect()
    };
    let shape_basis = round_all(orthonormalize(shape_raw, config.shape_dim, "shape")?);
    let color_basis = round_all(orthonormalize(color_raw, config.color_dim, "color")?);

    Ok(MorphableModel {
        base_vertices,
        triangles,
        base_colors,
        shape_basis,
        color_basis,
        seed,
    })
}

impl MorphableModel {
    pub fn n_vertices(&self) -> usize {
        self.base_vertices.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn color_dim(&self) -> usize {
        self.color_basis.len()
    }

    pub fn param_dim(&self) -> usize {
        self.shape_dim() + self.color_dim() + POSE_LIGHT_DIM
    }

    /// Prior mean as a parameter record sized for this model.
    pub fn prior_mean(&self, prior: &PriorSpec) -> SceneParams {
        prior.mean_params(self.shape_dim(), self.color_dim())
    }

    pub fn sample_prior(&self, prior: &PriorSpec, rng: &mut Rng) -> SceneParams {
        prior.sample(rng, self.shape_dim(), self.color_dim())
    }

    pub fn params_from_vector(&self, v: &[f64]) -> Result<SceneParams> {
        SceneParams::from_vector(v, self.shape_dim(), self.color_dim())
    }

    /// Applies the linear model: base plus coefficient-weighted basis vectors,
    /// colors clamped to `[0, 1]`.
    pub fn instance(&self, y: &SceneParams) -> Result<Mesh<'_>> {
        if y.shape_coeffs.len() != self.shape_dim() || y.color_coeffs.len() != self.color_dim() {
            return Err(Error::contract(format!(
                "coefficient counts ({}, {}) do not match model ({}, {})",
                y.shape_coeffs.len(),
                y.color_coeffs.len(),
                self.shape_dim(),
                self.color_dim()
            )));
        }
        let mut vertices = self.base_vertices.clone();
        for (c, basis) in y.shape_coeffs.iter().zip(&self.shape_basis) {
            if *c == 0.0 {
                continue;
            }
            for (v, d) in vertices.iter_mut().zip(basis.chunks_exact(3)) {
                v[0] += c * d[0];
                v[1] += c * d[1];
                v[2] += c * d[2];
            }
        }
        let mut colors = self.base_colors.clone();
        for (c, basis) in y.color_coeffs.iter().zip(&self.color_basis) {
            if *c == 0.0 {
                continue;
            }
            for (v, d) in colors.iter_mut().zip(basis.chunks_exact(3)) {
                v[0] += c * d[0];
                v[1] += c * d[1];
                v[2] += c * d[2];
            }
        }
        for col in &mut colors {
            for ch in col.iter_mut() {
                *ch = ch.clamp(0.0, 1.0);
            }
        }
        Ok(Mesh {
            vertices,
            colors,
            triangles: &self.triangles,
        })
    }
}
