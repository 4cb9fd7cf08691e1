//! Deterministic forward model: instance the mesh, pose it, project it through a
//! pinhole camera and rasterize with a z-buffer and flat Lambertian shading.
//!
//! Interpolation is affine in screen space (no perspective correction) and
//! there is no anti-aliasing. Pixel centers sit at half-integer coordinates and
//! edges follow the top-left fill rule, so pixels on a shared edge are drawn
//! exactly once. Everything is computed in `f64` and stored as `f32`.

use crate::error::{Error, Result};
use crate::scene::{MorphableModel, SceneParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 64,
            height: 64,
            focal: 64.0,
            background: [0.1, 0.1, 0.15],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::contract("image must be at least 8x8"));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::contract("focal length must be positive"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::contract("background color must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Row-major RGB raster with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::contract(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                3 * width * height
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("image channels must lie in [0, 1]"));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `Rz(roll) * Rx(pitch) * Ry(yaw)`.
pub fn rotation(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&rx, &ry))
}

/// A projected vertex. `depth` is only meaningful when `visible`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

const MIN_DEPTH: f64 = 1e-6;

/// Pinhole projection of an already posed vertex for a camera at the origin
/// looking down +z, with the object pushed `distance` along the axis.
pub fn project(vertex: [f64; 3], config: &RenderConfig, distance: f64) -> ScreenVertex {
    let depth = vertex[2] + distance;
    if depth <= MIN_DEPTH {
        return ScreenVertex {
            u: f64::NAN,
            v: f64::NAN,
            depth,
            visible: false,
        };
    }
    ScreenVertex {
        u: config.focal * vertex[0] / depth + config.width as f64 / 2.0,
        v: -config.focal * vertex[1] / depth + config.height as f64 / 2.0,
        depth,
        visible: true,
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Unit vector from the surface toward the light. Azimuth and elevation zero
/// point at the camera.
pub fn light_direction(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    [sa * ce, se, -ca * ce]
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// For positive-area (clockwise on screen, y down) triangles: horizontal edges
/// running right are top edges, edges running up are left edges.
fn is_top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

fn covers(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

/// Z-buffered framebuffer.
#[derive(Debug, Clone)]
pub struct Rasterizer {
    width: usize,
    height: usize,
    color: Vec<[f64; 3]>,
    depth: Vec<f64>,
}

impl Rasterizer {
    pub fn new(width: usize, height: usize, background: [f64; 3]) -> Self {
        Rasterizer {
            width,
            height,
            color: vec![background; width * height],
            depth: vec![f64::INFINITY; width * height],
        }
    }

    /// Draws one flat-shaded triangle with per-vertex albedo. Triangles with a
    /// hidden vertex or zero projected area are skipped.
    pub fn draw_triangle(&mut self, verts: [ScreenVertex; 3], albedo: [[f64; 3]; 3], intensity: f64) {
        if verts.iter().any(|v| !v.visible) {
            return;
        }
        let mut p = verts.map(|v| (v.u, v.v));
        let mut z = verts.map(|v| v.depth);
        let mut c = albedo;
        let mut area = edge(p[0], p[1], p[2]);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        if area < 0.0 {
            p.swap(1, 2);
            z.swap(1, 2);
            c.swap(1, 2);
            area = -area;
        }

        let min_u = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let max_u = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        let min_v = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let max_v = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_u - 0.5).ceil().max(0.0);
        let x1 = (max_u - 0.5).floor().min(self.width as f64 - 1.0);
        let y0 = (min_v - 0.5).ceil().max(0.0);
        let y1 = (max_v - 0.5).floor().min(self.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let tl = [
            is_top_left(p[1], p[2]),
            is_top_left(p[2], p[0]),
            is_top_left(p[0], p[1]),
        ];
        let inv_area = 1.0 / area;

        for y in y0 as usize..=y1 as usize {
            let py = y as f64 + 0.5;
            for x in x0 as usize..=x1 as usize {
                let q = (x as f64 + 0.5, py);
                let w0 = edge(p[1], p[2], q);
                let w1 = edge(p[2], p[0], q);
                let w2 = edge(p[0], p[1], q);
                if !(covers(w0, tl[0]) && covers(w1, tl[1]) && covers(w2, tl[2])) {
                    continue;
                }
                let (l0, l1, l2) = (w0 * inv_area, w1 * inv_area, w2 * inv_area);
                let d = l0 * z[0] + l1 * z[1] + l2 * z[2];
                let k = y * self.width + x;
                if d < self.depth[k] {
                    self.depth[k] = d;
                    let mut rgb = [0.0; 3];
                    for (ch, out) in rgb.iter_mut().enumerate() {
                        let a = l0 * c[0][ch] + l1 * c[1][ch] + l2 * c[2][ch];
                        *out = (a * intensity).clamp(0.0, 1.0);
                    }
                    self.color[k] = rgb;
                }
            }
        }
    }

    pub fn covered(&self) -> Vec<bool> {
        self.depth.iter().map(|d| d.is_finite()).collect()
    }

    pub fn into_image(self) -> Image {
        let mut data = Vec::with_capacity(3 * self.width * self.height);
        for rgb in &self.color {
            data.extend(rgb.iter().map(|&c| c as f32));
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Image plus the per-pixel mask of pixels hit by at least one fragment.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: Image,
    pub coverage: Vec<bool>,
}

impl Rendered {
    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c).count()
    }

    /// Mean column (pixel-center u) of covered pixels, `None` if nothing is covered.
    pub fn covered_centroid_u(&self) -> Option<f64> {
        let w = self.image.width();
        let (mut sum, mut n) = (0.0, 0usize);
        for (k, c) in self.coverage.iter().enumerate() {
            if *c {
                sum += (k % w) as f64 + 0.5;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

pub fn render(model: &MorphableModel, y: &SceneParams, config: &RenderConfig) -> Result<Image> {
    Ok(render_with_coverage(model, y, config)?.image)
}

pub fn render_with_coverage(
    model: &MorphableModel,
    y: &SceneParams,
    config: &RenderConfig,
) -> Result<Rendered> {
    let mesh = model.instance(y)?;
    let rot = rotation(y.yaw, y.pitch, y.roll);
    let distance = y.log_distance.exp();
    let posed: Vec<[f64; 3]> = mesh
        .vertices
        .iter()
        .map(|v| {
            let r = mat_vec(&rot, *v);
            [r[0] + y.tx, r[1] + y.ty, r[2]]
        })
        .collect();
    let screen: Vec<ScreenVertex> = posed.iter().map(|v| project(*v, config, distance)).collect();

    let light = light_direction(y.light_azimuth, y.light_elevation);
    let ambient = softplus(y.ambient_raw);
    let diffuse = softplus(y.diffuse_raw);

    let mut raster = Rasterizer::new(config.width, config.height, config.background);
    for tri in mesh.triangles {
        let [a, b, c] = tri.map(|i| i as usize);
        let (pa, pb, pc) = (posed[a], posed[b], posed[c]);
        let e1 = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let e2 = [pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]];
        let n = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let lambert = if len > 0.0 {
            ((n[0] * light[0] + n[1] * light[1] + n[2] * light[2]) / len).max(0.0)
        } else {
            0.0
        };
        let intensity = ambient + diffuse * lambert;
        raster.draw_triangle(
            [screen[a], screen[b], screen[c]],
            [mesh.colors[a], mesh.colors[b], mesh.colors[c]],
            intensity,
        );
    }
    let coverage = raster.covered();
    Ok(Rendered {
        image: raster.into_image(),
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::scene::{generate_model, ModelConfig, PriorSpec};
    use std::f64::consts::PI;

    fn setup() -> (MorphableModel, PriorSpec, RenderConfig) {
        (
            generate_model(7, &ModelConfig::default()).unwrap(),
            PriorSpec::default(),
            RenderConfig::default(),
        )
    }

    #[test]
    fn rotation_identity_and_orthogonality() {
        assert_eq!(rotation(0.0, 0.0, 0.0), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let r = rotation(3.0 * rng.normal(), 3.0 * rng.normal(), 3.0 * rng.normal());
            for i in 0..3 {
                for j in 0..3 {
                    let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((rtr - expected).abs() < 1e-12);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_yaw_turns_z_into_x() {
        let v = mat_vec(&rotation(PI / 2.0, 0.0, 0.0), [0.0, 0.0, 1.0]);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn projection_rules() {
        let cfg = RenderConfig::default();
        let p = project([0.0, 0.0, 0.0], &cfg, 4.0);
        assert_eq!((p.u, p.v, p.depth, p.visible), (32.0, 32.0, 4.0, true));

        let near = project([1.0, 0.5, 0.0], &cfg, 4.0);
        let far = project([1.0, 0.5, 0.0], &cfg, 8.0);
        assert!(((far.u - 32.0) - (near.u - 32.0) / 2.0).abs() < 1e-12);
        assert!(((far.v - 32.0) - (near.v - 32.0) / 2.0).abs() < 1e-12);
        // World y up is image y down.
        assert!(near.v < 32.0);

        assert!(!project([0.0, 0.0, -4.0], &cfg, 4.0).visible);
    }

    #[test]
    fn render_is_bit_deterministic() {
        let (m, prior, cfg) = setup();
        let y = m.sample_prior(&prior, &mut Rng::new(3));
        let a = render(&m, &y, &cfg).unwrap();
        let b = render(&m, &y, &cfg).unwrap();
        let bits = |im: &Image| im.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn face_out_of_frame_gives_background() {
        let (m, prior, cfg) = setup();
        let mut y = m.prior_mean(&prior);
        y.tx = 1e3;
        let r = render_with_coverage(&m, &y, &cfg).unwrap();
        assert_eq!(r.covered_count(), 0);
        let bg = cfg.background.map(|c| c as f32);
        for px in r.image.data().chunks_exact(3) {
            assert_eq!(px, bg);
        }
    }

    #[test]
    fn zero_illumination_gives_black_face() {
        let (m, prior, cfg) = setup();
        let mut y = m.prior_mean(&prior);
        y.ambient_raw = -20.0;
        y.diffuse_raw = -20.0;
        let r = render_with_coverage(&m, &y, &cfg).unwrap();
        assert!(r.covered_count() > 500);
        for (k, px) in r.image.data().chunks_exact(3).enumerate() {
            if r.coverage[k] {
                assert!(px.iter().all(|c| *c <= 1e-6));
            }
        }
    }

    #[test]
    fn mean_face_is_centered_and_sized() {
        let (m, prior, cfg) = setup();
        let r = render_with_coverage(&m, &m.prior_mean(&prior), &cfg).unwrap();
        let u = r.covered_centroid_u().unwrap();
        assert!((u - 32.0).abs() < 0.5);
        // Roughly an ellipse of 32 x 42 px.
        assert!((800..1400).contains(&r.covered_count()), "{}", r.covered_count());
    }

    #[test]
    fn yaw_sweep_moves_centroid_monotonically() {
        let (m, prior, cfg) = setup();
        let mut y = m.prior_mean(&prior);
        let centroids: Vec<f64> = (0..7)
            .map(|k| {
                y.yaw = -0.3 + 0.1 * k as f64;
                render_with_coverage(&m, &y, &cfg)
                    .unwrap()
                    .covered_centroid_u()
                    .unwrap()
            })
            .collect();
        let rising = centroids.windows(2).all(|w| w[1] > w[0]);
        let falling = centroids.windows(2).all(|w| w[1] < w[0]);
        assert!(rising || falling, "{centroids:?}");
    }

    fn sv(u: f64, v: f64, depth: f64) -> ScreenVertex {
        ScreenVertex {
            u,
            v,
            depth,
            visible: true,
        }
    }

    #[test]
    fn z_buffer_keeps_nearer_triangle() {
        let red = [[1.0, 0.0, 0.0]; 3];
        let blue = [[0.0, 0.0, 1.0]; 3];
        let near = [sv(2.0, 2.0, 1.0), sv(14.0, 2.0, 1.0), sv(2.0, 14.0, 1.0)];
        let far = [sv(4.0, 4.0, 5.0), sv(16.0, 4.0, 5.0), sv(4.0, 16.0, 5.0)];
        for order in [[near, far], [far, near]] {
            let mut r = Rasterizer::new(16, 16, [0.0; 3]);
            r.draw_triangle(order[0], if order[0] == near { red } else { blue }, 1.0);
            r.draw_triangle(order[1], if order[1] == near { red } else { blue }, 1.0);
            let im = r.into_image();
            // (5, 5) lies inside both triangles.
            assert_eq!(im.pixel(5, 5), [1.0, 0.0, 0.0]);
            // (12, 5) lies only inside the far one.
            assert_eq!(im.pixel(12, 5), [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn shared_edges_are_drawn_once() {
        // A square split along its diagonal, both windings; every pixel center
        // on the diagonal must belong to exactly one triangle.
        let a = sv(0.0, 0.0, 1.0);
        let b = sv(8.0, 0.0, 1.0);
        let c = sv(8.0, 8.0, 1.0);
        let d = sv(0.0, 8.0, 1.0);
        for (t1, t2) in [([a, b, c], [a, c, d]), ([a, c, b], [a, d, c])] {
            let mut count = vec![0; 64];
            for t in [t1, t2] {
                let mut r = Rasterizer::new(8, 8, [0.0; 3]);
                r.draw_triangle(t, [[1.0; 3]; 3], 1.0);
                for (k, hit) in r.covered().iter().enumerate() {
                    count[k] += *hit as u32;
                }
            }
            assert!(count.iter().all(|c| *c == 1), "{count:?}");
        }
        // Diagonal through pixel centers.
        let a = sv(0.5, 0.5, 1.0);
        let b = sv(7.5, 0.5, 1.0);
        let c = sv(7.5, 7.5, 1.0);
        let d = sv(0.5, 7.5, 1.0);
        let mut count = vec![0; 64];
        for t in [[a, b, c], [a, c, d]] {
            let mut r = Rasterizer::new(8, 8, [0.0; 3]);
            r.draw_triangle(t, [[1.0; 3]; 3], 1.0);
            for (k, hit) in r.covered().iter().enumerate() {
                count[k] += *hit as u32;
            }
        }
        // The bottom-right corner (7, 7) is excluded by the fill rule.
        for y in 0..7 {
            assert_eq!(count[y * 8 + y], 1);
        }
        assert_eq!(count[63], 0);
        assert!(count.iter().all(|c| *c <= 1));
    }

    #[test]
    fn degenerate_triangles_are_skipped() {
        let mut r = Rasterizer::new(8, 8, [0.0; 3]);
        r.draw_triangle([sv(0.0, 0.0, 1.0), sv(4.0, 4.0, 1.0), sv(8.0, 8.0, 1.0)], [[1.0; 3]; 3], 1.0);
        assert!(r.covered().iter().all(|c| !c));
    }

    #[test]
    fn channels_stay_in_unit_interval() {
        let (m, prior, cfg) = setup();
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let mut y = m.sample_prior(&prior, &mut rng);
            y.ambient_raw += 3.0;
            y.color_coeffs.iter_mut().for_each(|c| *c *= 20.0);
            let im = render(&m, &y, &cfg).unwrap();
            assert!(im.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
