//! Analytic ground truth: nearest-hit ray tracing of the primitives with
//! Lambertian shading.

use rayon::prelude::*;

use super::scene::SceneSpec;
use crate::math::Vec3;
use crate::render::Camera;

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthView {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    /// Hit distance along the unit ray; 0 where nothing is hit.
    pub depth: Vec<f32>,
    /// Instance id per pixel; 0 for background.
    pub instance: Vec<u16>,
}

/// Nearest primitive hit along a ray: `(instance id, t, normal)`.
pub fn trace(scene: &SceneSpec, origin: &Vec3, dir: &Vec3) -> Option<(u16, f64, Vec3)> {
    scene
        .primitives
        .iter()
        .filter_map(|p| p.intersect(origin, dir, 1e-9).map(|h| (p.id, h.t, h.normal)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
}

pub fn shade(scene: &SceneSpec, albedo: [f64; 3], normal: &Vec3) -> [f64; 3] {
    let l = Vec3::from(scene.light_dir).normalize();
    let lambert = normal.dot(&l).max(0.0);
    albedo.map(|a| (a * (lambert + scene.ambient)).clamp(0.0, 1.0))
}

pub fn render_view(scene: &SceneSpec, camera: &Camera) -> GroundTruthView {
    let (w, h) = (camera.width, camera.height);
    let px: Vec<([f64; 3], f32, u16)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = camera.ray_through((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let prim_hit = trace(scene, &ray.origin, &ray.dir);
            let floor_hit = scene.floor.as_ref().and_then(|f| {
                (ray.dir.z < -1e-12)
                    .then(|| (f.height - ray.origin.z) / ray.dir.z)
                    .filter(|t| *t > 0.0)
                    .map(|t| (t, f.albedo))
            });
            match (prim_hit, floor_hit) {
                (Some((id, t, n)), f) if f.is_none_or(|(tf, _)| t < tf) => {
                    let albedo = scene.primitive(id).expect("hit id exists").albedo;
                    (shade(scene, albedo, &n), t as f32, id)
                }
                (_, Some((tf, albedo))) => (shade(scene, albedo, &Vec3::z()), tf as f32, 0),
                _ => ([1.0; 3], 0.0, 0),
            }
        })
        .collect();
    GroundTruthView {
        width: w,
        height: h,
        rgb: px.iter().map(|p| p.0).collect(),
        depth: px.iter().map(|p| p.1).collect(),
        instance: px.iter().map(|p| p.2).collect(),
    }
}

pub fn render_ground_truth(scene: &SceneSpec, cameras: &[Camera]) -> Vec<GroundTruthView> {
    cameras.iter().map(|c| render_view(scene, c)).collect()
}

/// Instance whose surface is nearest to `p`, if within `tolerance`.
pub fn nearest_instance(scene: &SceneSpec, p: &Vec3, tolerance: f64) -> Option<u16> {
    scene
        .primitives
        .iter()
        .map(|prim| (prim.id, prim.surface_distance(p)))
        .filter(|(_, d)| *d <= tolerance)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(id, _)| id)
}

#[cfg(test)]
mod tests {
    use super::super::scene::sphere;
    use super::*;
    use nalgebra::Matrix3;

    fn axis_camera(f: f64) -> Camera {
        Camera {
            id: 0,
            fx: f,
            fy: f,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            near: 0.1,
            far: 100.0,
        }
    }

    #[test]
    fn empty_half_space_is_background() {
        let scene = SceneSpec::new(vec![sphere(1, "sphere", [0.0, 0.0, -5.0], 1.0, [0.5; 3])], 0);
        let v = render_view(&scene, &axis_camera(40.0));
        assert!(v.instance.iter().all(|&i| i == 0));
        assert!(v.rgb.iter().all(|c| *c == [1.0; 3]));
    }

    #[test]
    fn sphere_silhouette_matches_projection() {
        let (f, r, d) = (60.0, 1.0, 6.0);
        let scene = SceneSpec::new(vec![sphere(1, "sphere", [0.0, 0.0, d], r, [0.5; 3])], 0);
        let v = render_view(&scene, &axis_camera(f));
        // exact perspective silhouette radius of a sphere: f * r / sqrt(d^2 - r^2)
        let expected = f * r / (d * d - r * r).sqrt();
        let approx = f * r / d;
        assert!((expected - approx).abs() < 1.0);
        // widest row through the center
        let row = 32;
        let hits: Vec<usize> = (0..64).filter(|&u| v.instance[row * 64 + u] == 1).collect();
        let measured = 0.5 * hits.len() as f64;
        assert!((measured - approx).abs() <= 1.0, "{measured} vs {approx}");
        assert!(v.instance.iter().all(|&i| i == 0 || i == 1));
    }

    #[test]
    fn nearest_instance_respects_tolerance() {
        let scene = SceneSpec::new(vec![sphere(3, "sphere", [0.0, 0.0, 0.0], 0.5, [0.5; 3])], 0);
        assert_eq!(nearest_instance(&scene, &Vec3::new(0.52, 0.0, 0.0), 0.05), Some(3));
        assert_eq!(nearest_instance(&scene, &Vec3::new(0.7, 0.0, 0.0), 0.05), None);
    }
}
