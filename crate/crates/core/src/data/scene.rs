//! Synthetic desk-scale scenes built from spheres and z-rotated boxes.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::math::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3], rotation_z: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    /// Instance id; 0 is reserved for background.
    pub id: u16,
    pub class: String,
    pub center: [f64; 3],
    pub shape: Shape,
    pub albedo: [f64; 3],
}

/// Horizontal projection of a primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Footprint {
    Disk { center: [f64; 2], radius: f64 },
    Rect { center: [f64; 2], half: [f64; 2], angle: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

impl Primitive {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn half_height(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents, .. } => half_extents[2],
        }
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - self.half_height()
    }

    pub fn top(&self) -> f64 {
        self.center[2] + self.half_height()
    }

    /// Characteristic size used by the proximity and sameness rules.
    pub fn size(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents, .. } => half_extents.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn footprint(&self) -> Footprint {
        let c = [self.center[0], self.center[1]];
        match self.shape {
            Shape::Sphere { radius } => Footprint::Disk { center: c, radius },
            Shape::Box {
                half_extents,
                rotation_z,
            } => Footprint::Rect {
                center: c,
                half: [half_extents[0], half_extents[1]],
                angle: rotation_z,
            },
        }
    }

    /// World-space axis-aligned bounding box.
    pub fn aabb(&self) -> Aabb {
        let c = self.center;
        let (hx, hy, hz) = match self.shape {
            Shape::Sphere { radius } => (radius, radius, radius),
            Shape::Box {
                half_extents: h,
                rotation_z: a,
            } => {
                let (s, co) = a.sin_cos();
                (h[0] * co.abs() + h[1] * s.abs(), h[0] * s.abs() + h[1] * co.abs(), h[2])
            }
        };
        Aabb::new([c[0] - hx, c[1] - hy, c[2] - hz], [c[0] + hx, c[1] + hy, c[2] + hz])
    }

    fn to_local(&self, p: &Vec3, angle: f64) -> Vec3 {
        let d = p - self.center();
        let (s, c) = angle.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    fn dir_to_local(v: &Vec3, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    fn dir_to_world(v: &Vec3, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    /// Nearest intersection with `t > t_min`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<Hit> {
        match self.shape {
            Shape::Sphere { radius } => {
                let oc = origin - self.center();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let a = dir.norm_squared();
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > t_min)?;
                let p = origin + dir * t;
                Some(Hit {
                    t,
                    normal: (p - self.center()) / radius,
                })
            }
            Shape::Box {
                half_extents: h,
                rotation_z: angle,
            } => {
                let o = self.to_local(origin, angle);
                let d = Self::dir_to_local(dir, angle);
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let mut n0 = Vec3::zeros();
                let mut n1 = Vec3::zeros();
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a].abs() > h[a] {
                            return None;
                        }
                        continue;
                    }
                    let mut ta = (-h[a] - o[a]) / d[a];
                    let mut tb = (h[a] - o[a]) / d[a];
                    let mut na = Vec3::zeros();
                    na[a] = -1.0;
                    let mut nb = Vec3::zeros();
                    nb[a] = 1.0;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        std::mem::swap(&mut na, &mut nb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        n0 = na;
                    }
                    if tb < t1 {
                        t1 = tb;
                        n1 = nb;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (t, n) = if t0 > t_min {
                    (t0, n0)
                } else if t1 > t_min {
                    (t1, n1)
                } else {
                    return None;
                };
                Some(Hit {
                    t,
                    normal: Self::dir_to_world(&n, angle),
                })
            }
        }
    }

    /// Unsigned distance from `p` to the primitive surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => ((p - self.center()).norm() - radius).abs(),
            Shape::Box {
                half_extents: h,
                rotation_z: angle,
            } => {
                let l = self.to_local(p, angle);
                let q = Vec3::new(l.x.abs() - h[0], l.y.abs() - h[1], l.z.abs() - h[2]);
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                (outside + inside).abs()
            }
        }
    }
}

/// Separating-axis / closest-point test between two footprints. `margin`
/// grows both shapes.
pub fn footprints_overlap(a: &Footprint, b: &Footprint, margin: f64) -> bool {
    match (a, b) {
        (Footprint::Disk { center: c1, radius: r1 }, Footprint::Disk { center: c2, radius: r2 }) => {
            let d = ((c1[0] - c2[0]).powi(2) + (c1[1] - c2[1]).powi(2)).sqrt();
            d < r1 + r2 + 2.0 * margin
        }
        (Footprint::Disk { center, radius }, Footprint::Rect { center: rc, half, angle })
        | (Footprint::Rect { center: rc, half, angle }, Footprint::Disk { center, radius }) => {
            let (s, c) = angle.sin_cos();
            let dx = center[0] - rc[0];
            let dy = center[1] - rc[1];
            let lx = c * dx + s * dy;
            let ly = -s * dx + c * dy;
            let qx = (lx.abs() - half[0] - margin).max(0.0);
            let qy = (ly.abs() - half[1] - margin).max(0.0);
            (qx * qx + qy * qy).sqrt() < radius + margin
        }
        (Footprint::Rect { center: c1, half: h1, angle: a1 }, Footprint::Rect { center: c2, half: h2, angle: a2 }) => {
            let axes = |a: f64| {
                let (s, c) = a.sin_cos();
                [[c, s], [-s, c]]
            };
            let ax1 = axes(*a1);
            let ax2 = axes(*a2);
            let d = [c2[0] - c1[0], c2[1] - c1[1]];
            for axis in ax1.iter().chain(ax2.iter()) {
                let proj = |ax: &[[f64; 2]; 2], h: &[f64; 2]| {
                    (h[0] + margin) * (ax[0][0] * axis[0] + ax[0][1] * axis[1]).abs()
                        + (h[1] + margin) * (ax[1][0] * axis[0] + ax[1][1] * axis[1]).abs()
                };
                let dist = (d[0] * axis[0] + d[1] * axis[1]).abs();
                if dist >= proj(&ax1, h1) + proj(&ax2, h2) {
                    return false;
                }
            }
            true
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    pub height: f64,
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    /// Optional infinite floor, rendered as background (id 0).
    #[serde(default)]
    pub floor: Option<Floor>,
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub bounds: Aabb,
    /// Declared `(part, whole)` pairs for the "part of" predicate.
    #[serde(default)]
    pub parts: Vec<[u16; 2]>,
    pub seed: u64,
}

pub const SPHERE_CLASSES: [&str; 2] = ["sphere", "ball"];
pub const BOX_CLASSES: [&str; 2] = ["box", "crate"];

pub fn default_bounds() -> Aabb {
    Aabb::new([-1.0, -1.0, -0.05], [1.0, 1.0, 1.2])
}

fn default_light() -> [f64; 3] {
    let l = Vec3::new(0.4, 0.3, 1.0).normalize();
    [l.x, l.y, l.z]
}

pub fn sphere(id: u16, class: &str, center: [f64; 3], radius: f64, albedo: [f64; 3]) -> Primitive {
    Primitive {
        id,
        class: class.into(),
        center,
        shape: Shape::Sphere { radius },
        albedo,
    }
}

pub fn cuboid(id: u16, class: &str, center: [f64; 3], half_extents: [f64; 3], rotation_z: f64, albedo: [f64; 3]) -> Primitive {
    Primitive {
        id,
        class: class.into(),
        center,
        shape: Shape::Box {
            half_extents,
            rotation_z,
        },
        albedo,
    }
}

/// Parameters for randomized scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSceneParams {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that a new object is stacked on an existing box.
    pub stack_probability: f64,
    /// Minimum horizontal gap between objects resting on the ground.
    pub ground_gap: f64,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        Self {
            min_objects: 4,
            max_objects: 6,
            stack_probability: 0.35,
            ground_gap: 0.08,
        }
    }
}

impl SceneSpec {
    pub fn new(primitives: Vec<Primitive>, seed: u64) -> Self {
        Self {
            primitives,
            floor: None,
            light_dir: default_light(),
            ambient: 0.25,
            bounds: default_bounds(),
            parts: Vec::new(),
            seed,
        }
    }

    pub fn extent(&self) -> f64 {
        self.bounds.max_extent()
    }

    /// Contact tolerance: 1% of the scene extent.
    pub fn contact_tolerance(&self) -> f64 {
        0.01 * self.extent()
    }

    pub fn primitive(&self, id: u16) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.id == id)
    }

    /// The canonical two-object scene: a sphere standing on a box.
    pub fn demo() -> Self {
        Self::new(
            vec![
                cuboid(1, "box", [0.0, 0.0, 0.18], [0.3, 0.25, 0.18], 0.3, [0.85, 0.45, 0.2]),
                sphere(2, "sphere", [0.03, -0.02, 0.62], 0.26, [0.2, 0.45, 0.9]),
            ],
            0,
        )
        .with_bounds(Aabb::new([-0.55, -0.55, -0.05], [0.55, 0.55, 0.95]))
    }

    /// Ten instances: four stacks of a sphere on a box plus two loose objects.
    pub fn ten_instance() -> Self {
        let boxes = [(-0.55, -0.5, "box"), (0.05, -0.55, "crate"), (0.6, -0.4, "box"), (-0.5, 0.3, "crate")];
        let balls = ["sphere", "ball", "sphere", "ball"];
        let mut prims = Vec::new();
        for (i, ((x, y, class), ball)) in boxes.iter().zip(balls).enumerate() {
            let shade = 0.3 + 0.15 * i as f64;
            prims.push(cuboid(i as u16 + 1, class, [*x, *y, 0.12], [0.14, 0.14, 0.12], 0.2 * i as f64, [shade, 0.5, 0.3]));
            prims.push(sphere(i as u16 + 5, ball, [*x, *y, 0.34], 0.1, [0.2, shade, 0.8]));
        }
        prims.push(cuboid(9, "crate", [0.2, 0.35, 0.13], [0.13, 0.13, 0.13], 0.5, [0.8, 0.7, 0.3]));
        prims.push(sphere(10, "ball", [0.65, 0.45, 0.12], 0.12, [0.9, 0.2, 0.2]));
        Self::new(prims, 10)
    }

    pub fn with_bounds(mut self, bounds: Aabb) -> Self {
        self.bounds = bounds;
        self
    }

    /// Checks ids, sizes, bounds, vocabulary-free invariants and overlaps.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        let mut ids: Vec<u16> = self.primitives.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.contains(&0) || ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("instance ids must be unique and non-zero".into());
        }
        for p in &self.primitives {
            let ok = match p.shape {
                Shape::Sphere { radius } => radius > 0.0,
                Shape::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            };
            if !ok {
                return bad(format!("primitive {} has non-positive size", p.id));
            }
            let b = p.aabb();
            if !(self.bounds.contains(&Vec3::from(b.min)) && self.bounds.contains(&Vec3::from(b.max))) {
                return bad(format!("primitive {} leaves the field bounds", p.id));
            }
        }
        let tol = self.contact_tolerance();
        for (i, a) in self.primitives.iter().enumerate() {
            for b in &self.primitives[i + 1..] {
                if contains_aabb(&b.aabb(), &a.aabb()) || contains_aabb(&a.aabb(), &b.aabb()) {
                    continue;
                }
                if primitives_overlap(a, b, tol) {
                    return bad(format!("primitives {} and {} overlap", a.id, b.id));
                }
            }
        }
        Ok(())
    }

    /// Random scene with `min..=max` objects; overlapping placements are resampled.
    pub fn random(params: &RandomSceneParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(params.min_objects..=params.max_objects);
        let bounds = default_bounds();
        let mut prims: Vec<Primitive> = Vec::new();
        let mut attempts = 0;
        while prims.len() < n {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidScene(format!("could not place {n} objects")));
            }
            let id = prims.len() as u16 + 1;
            let is_sphere = rng.random_bool(0.5);
            let albedo = [
                rng.random_range(0.15..0.95),
                rng.random_range(0.15..0.95),
                rng.random_range(0.15..0.95),
            ];
            let supports: Vec<&Primitive> = prims
                .iter()
                .filter(|p| matches!(p.shape, Shape::Box { .. }) && p.bottom().abs() < 1e-9)
                .filter(|p| !prims.iter().any(|q| (q.bottom() - p.top()).abs() < 1e-9 && footprints_overlap(&q.footprint(), &p.footprint(), 0.0)))
                .collect();
            let stack_on = if !supports.is_empty() && rng.random_bool(params.stack_probability) {
                Some((*supports.choose(&mut rng).unwrap()).clone())
            } else {
                None
            };
            let (shape, class) = if is_sphere {
                (
                    Shape::Sphere {
                        radius: rng.random_range(0.13..0.22),
                    },
                    *SPHERE_CLASSES.choose(&mut rng).unwrap(),
                )
            } else {
                (
                    Shape::Box {
                        half_extents: [
                            rng.random_range(0.12..0.24),
                            rng.random_range(0.12..0.24),
                            rng.random_range(0.1..0.2),
                        ],
                        rotation_z: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
                    },
                    *BOX_CLASSES.choose(&mut rng).unwrap(),
                )
            };
            let half_h = match shape {
                Shape::Sphere { radius } => radius,
                Shape::Box { half_extents, .. } => half_extents[2],
            };
            let center = match &stack_on {
                Some(s) => [
                    s.center[0] + rng.random_range(-0.04..0.04),
                    s.center[1] + rng.random_range(-0.04..0.04),
                    s.top() + half_h,
                ],
                None => {
                    let r = rng.random_range(0.0..0.62);
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    [r * a.cos(), r * a.sin(), half_h]
                }
            };
            let cand = Primitive {
                id,
                class: class.to_string(),
                center,
                shape,
                albedo,
            };
            let b = cand.aabb();
            if !(bounds.contains(&Vec3::from(b.min)) && bounds.contains(&Vec3::from(b.max))) || b.max[2] > 1.0 {
                continue;
            }
            let clash = prims.iter().any(|p| {
                if stack_on.as_ref().is_some_and(|s| s.id == p.id) {
                    return false;
                }
                let z_overlap = cand.bottom() < p.top() + params.ground_gap && p.bottom() < cand.top() + params.ground_gap;
                z_overlap && footprints_overlap(&cand.footprint(), &p.footprint(), 0.5 * params.ground_gap)
            });
            if clash {
                continue;
            }
            prims.push(cand);
        }
        let mut scene = Self::new(prims, seed);
        scene.bounds = bounds;
        scene.validate()?;
        Ok(scene)
    }
}

pub fn contains_aabb(outer: &Aabb, inner: &Aabb) -> bool {
    (0..3).all(|a| inner.min[a] >= outer.min[a] && inner.max[a] <= outer.max[a])
}

/// Conservative solid overlap: vertical intervals overlap by more than `tol`
/// and the footprints intersect.
pub fn primitives_overlap(a: &Primitive, b: &Primitive, tol: f64) -> bool {
    let z = a.top().min(b.top()) - a.bottom().max(b.bottom());
    z > tol && footprints_overlap(&a.footprint(), &b.footprint(), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_scene_is_valid() {
        SceneSpec::demo().validate().unwrap();
    }

    #[test]
    fn random_scenes_are_deterministic_and_valid() {
        let p = RandomSceneParams::default();
        for seed in 0..20 {
            let a = SceneSpec::random(&p, seed).unwrap();
            let b = SceneSpec::random(&p, seed).unwrap();
            assert_eq!(a, b);
            assert!((4..=6).contains(&a.primitives.len()));
        }
    }

    #[test]
    fn explicit_overlap_is_an_error() {
        let s = SceneSpec::new(
            vec![
                sphere(1, "sphere", [0.0, 0.0, 0.2], 0.2, [0.5; 3]),
                sphere(2, "sphere", [0.1, 0.0, 0.2], 0.2, [0.5; 3]),
            ],
            0,
        );
        assert!(matches!(s.validate(), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn box_intersection_and_distance() {
        let b = cuboid(1, "box", [0.0, 0.0, 0.0], [0.5, 0.25, 0.1], std::f64::consts::FRAC_PI_2, [1.0; 3]);
        // rotated 90 degrees: x extent is now 0.25
        let hit = b.intersect(&Vec3::new(-2.0, 0.0, 0.0), &Vec3::x(), 0.0).unwrap();
        assert!((hit.t - 1.75).abs() < 1e-12);
        assert!((hit.normal - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(b.surface_distance(&Vec3::new(0.0, 0.0, 0.1)) < 1e-12);
        assert!((b.surface_distance(&Vec3::new(0.0, 0.0, 0.0)) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn footprint_tests() {
        let d = Footprint::Disk { center: [0.0, 0.0], radius: 0.5 };
        let r = Footprint::Rect { center: [0.7, 0.0], half: [0.3, 0.3], angle: 0.0 };
        assert!(footprints_overlap(&d, &r, 0.0));
        let r2 = Footprint::Rect { center: [0.9, 0.9], half: [0.3, 0.3], angle: 0.0 };
        assert!(!footprints_overlap(&d, &r2, 0.0));
        let a = Footprint::Rect { center: [0.0, 0.0], half: [0.5, 0.1], angle: 0.0 };
        let b = Footprint::Rect { center: [0.0, 0.45], half: [0.5, 0.1], angle: std::f64::consts::FRAC_PI_2 };
        assert!(footprints_overlap(&a, &b, 0.0));
    }
}
