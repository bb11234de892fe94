//! Cameras, stratified ray sampling, emission-absorption compositing and
//! per-frame rendering of every field head.

mod camera;
mod composite;

pub use camera::{Camera, CameraRecord, Ray};
pub use composite::{composite, composite_values, compositing_weights, expected_depth, sample_along_ray, sigma_gradient, Composite};

use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::field::{Cell, RadianceField};
use crate::math::{sigmoid, softplus, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples: usize,
    pub background: [f64; 3],
    /// Accumulated weight needed to count a ray as hitting a surface.
    pub hit_threshold: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            background: [1.0; 3],
            hit_threshold: 0.5,
        }
    }
}

/// Density pass along one ray, shared by every head rendered from it.
#[derive(Clone, Debug)]
pub struct RayMarch {
    pub ray: Ray,
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub geo_cells: Vec<Cell>,
    pub feat_cells: Vec<Cell>,
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
    pub transmittance: f64,
}

impl RayMarch {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn point(&self, k: usize) -> Vec3 {
        self.ray.at(self.depths[k])
    }

    pub fn opacity(&self) -> f64 {
        1.0 - self.transmittance
    }

    pub fn expected_depth(&self, hit_threshold: f64) -> Option<f64> {
        expected_depth(&self.weights, &self.depths, hit_threshold)
    }

    /// Surface point at the expected depth, if the ray hits.
    pub fn surface_point(&self, hit_threshold: f64) -> Option<Vec3> {
        self.expected_depth(hit_threshold).map(|t| self.ray.at(t))
    }
}

/// Marches `ray` through the part of `[near, far]` inside the field bounds.
pub fn march<R: Rng + ?Sized>(field: &RadianceField, ray: &Ray, near: f64, far: f64, samples: usize, rng: Option<&mut R>) -> Result<RayMarch> {
    let mut m = RayMarch {
        ray: *ray,
        depths: Vec::new(),
        deltas: Vec::new(),
        geo_cells: Vec::new(),
        feat_cells: Vec::new(),
        sigmas: Vec::new(),
        weights: Vec::new(),
        transmittance: 1.0,
    };
    let Some((t0, t1)) = field.bounds().intersect_ray(&ray.origin, &ray.dir) else {
        return Ok(m);
    };
    let (lo, hi) = (t0.max(near), t1.min(far));
    if !(hi > lo) || samples == 0 {
        return Ok(m);
    }
    m.depths = sample_along_ray(lo, hi, samples, rng);
    m.deltas = vec![(hi - lo) / samples as f64; samples];
    m.geo_cells.reserve(samples);
    m.feat_cells.reserve(samples);
    m.sigmas.reserve(samples);
    for &t in &m.depths {
        let p = ray.at(t);
        let gc = field.density.cell(&p)?;
        m.sigmas.push(softplus(field.density.read_scalar(&gc)));
        m.geo_cells.push(gc);
        m.feat_cells.push(field.semantic.cell(&p)?);
    }
    let (w, t) = compositing_weights(&m.sigmas, &m.deltas);
    m.weights = w;
    m.transmittance = t;
    Ok(m)
}

pub fn march_pixel(field: &RadianceField, camera: &Camera, u: i64, v: i64, samples: usize) -> Result<RayMarch> {
    let ray = camera.ray(u, v)?;
    march::<rand_chacha::ChaCha8Rng>(field, &ray, camera.near, camera.far, samples, None)
}

/// Per-sample colors (sigmoid of the raw color grid), sample-major.
pub fn sample_colors(field: &RadianceField, m: &RayMarch) -> Vec<f64> {
    let mut out = vec![0.0; 3 * m.len()];
    for (k, c) in m.geo_cells.iter().enumerate() {
        let o = &mut out[3 * k..3 * k + 3];
        field.color.read_into(c, o);
        o.iter_mut().for_each(|x| *x = sigmoid(*x));
    }
    out
}

/// Raw per-sample features from a feature grid, sample-major.
pub fn sample_features(grid: &crate::field::FeatureGrid, m: &RayMarch) -> Vec<f64> {
    let c = grid.channels;
    let mut out = vec![0.0; c * m.len()];
    for (k, cell) in m.feat_cells.iter().enumerate() {
        grid.read_into(cell, &mut out[c * k..c * (k + 1)]);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Heads {
    pub color: bool,
    pub depth: bool,
    pub semantic: bool,
    pub instance: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        color: true,
        depth: true,
        semantic: true,
        instance: true,
    };
    pub const COLOR: Heads = Heads {
        color: true,
        depth: false,
        semantic: false,
        instance: false,
    };
}

/// Per-pixel maps, row-major. Feature maps use a zero background.
#[derive(Clone, Debug, Default)]
pub struct FrameRender {
    pub width: usize,
    pub height: usize,
    pub opacity: Vec<f64>,
    pub color: Option<Vec<[f64; 3]>>,
    pub depth: Option<Vec<Option<f64>>>,
    pub semantic: Option<Vec<f64>>,
    pub instance: Option<Vec<f64>>,
}

struct PixelRender {
    opacity: f64,
    color: [f64; 3],
    depth: Option<f64>,
    semantic: Vec<f64>,
    instance: Vec<f64>,
}

pub fn render_pixel_heads(field: &RadianceField, camera: &Camera, u: usize, v: usize, heads: Heads, opts: &RenderOptions) -> Result<(RayMarch, [f64; 3], Vec<f64>, Vec<f64>)> {
    let m = march_pixel(field, camera, u as i64, v as i64, opts.samples)?;
    let mut color = [0.0; 3];
    if heads.color {
        let vals = sample_colors(field, &m);
        let c = composite_values(&m.weights, m.transmittance, &vals, 3, &opts.background);
        color.copy_from_slice(&c);
    }
    let feat = |grid: &crate::field::FeatureGrid, on: bool| {
        if !on {
            return Vec::new();
        }
        let vals = sample_features(grid, &m);
        composite_values(&m.weights, m.transmittance, &vals, grid.channels, &vec![0.0; grid.channels])
    };
    let semantic = feat(&field.semantic, heads.semantic);
    let instance = feat(&field.instance, heads.instance);
    Ok((m, color, semantic, instance))
}

/// Renders the requested heads for every pixel; all heads share one density pass per ray.
pub fn render_frame(field: &RadianceField, camera: &Camera, heads: Heads, opts: &RenderOptions) -> Result<FrameRender> {
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<PixelRender> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (m, color, semantic, instance) = render_pixel_heads(field, camera, i % w, i / w, heads, opts)?;
            Ok(PixelRender {
                opacity: m.opacity(),
                color,
                depth: if heads.depth { m.expected_depth(opts.hit_threshold) } else { None },
                semantic,
                instance,
            })
        })
        .collect::<Result<_>>()?;
    let mut out = FrameRender {
        width: w,
        height: h,
        opacity: pixels.iter().map(|p| p.opacity).collect(),
        ..Default::default()
    };
    if heads.color {
        out.color = Some(pixels.iter().map(|p| p.color).collect());
    }
    if heads.depth {
        out.depth = Some(pixels.iter().map(|p| p.depth).collect());
    }
    if heads.semantic {
        out.semantic = Some(pixels.iter().flat_map(|p| p.semantic.iter().copied()).collect());
    }
    if heads.instance {
        out.instance = Some(pixels.iter().flat_map(|p| p.instance.iter().copied()).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Aabb, GridConfig, HeadDims};

    fn cfg() -> GridConfig {
        GridConfig {
            resolution: [6, 6, 6],
            feature_resolution: [4, 4, 4],
            bounds: Aabb::new([-1.0; 3], [1.0; 3]),
            dims: HeadDims {
                semantic: 3,
                instance: 2,
                relation: 3,
                relation_input: 2,
                hidden: 4,
            },
        }
    }

    fn cam() -> Camera {
        Camera::look_at(0, Vec3::new(0.0, -3.0, 0.5), Vec3::zeros(), 16, 16, 60.0)
    }

    #[test]
    fn empty_field_renders_background() {
        let mut f = RadianceField::zeros(cfg()).unwrap();
        f.density.values.fill(-60.0);
        let r = render_frame(&f, &cam(), Heads::COLOR, &RenderOptions::default()).unwrap();
        for c in r.color.unwrap() {
            for x in c {
                assert!((x - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_semantic_head_renders_the_constant_direction() {
        let mut f = RadianceField::zeros(cfg()).unwrap();
        f.density.values.fill(2.0);
        let s = [0.3, -0.4, 1.2];
        f.semantic.values.chunks_mut(3).for_each(|c| c.copy_from_slice(&s));
        let r = render_frame(&f, &cam(), Heads::ALL, &RenderOptions::default()).unwrap();
        let sem = r.semantic.unwrap();
        for (i, o) in r.opacity.iter().enumerate() {
            if *o > 0.0 {
                let c = crate::math::cosine(&sem[3 * i..3 * i + 3], &s);
                assert!((c - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_and_transmittance_sum_to_one() {
        let f = crate::field::RadianceField::new(cfg(), crate::field::FieldInit { density_raw: 1.0, feature_std: 0.1 }, 3).unwrap();
        let c = cam();
        for v in 0..16 {
            for u in 0..16 {
                let m = march_pixel(&f, &c, u, v, 32).unwrap();
                let s: f64 = m.weights.iter().sum::<f64>() + m.transmittance;
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
