use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Pinhole camera. Camera frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
}

/// On-disk form used in `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4x4 camera-to-world transform.
    pub pose: Vec<f64>,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with world `+z` as up.
    pub fn look_at(id: u32, eye: Vec3, target: Vec3, width: usize, height: usize, fov_x_deg: f64) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&Vec3::z());
        if right.norm() < 1e-9 {
            right = Vec3::x();
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            id,
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: eye,
            near: 0.05,
            far: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("camera {}: focal lengths must be positive", self.id));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("camera {}: need 0 < near < far", self.id));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(err < 1e-6) {
            return bad(format!("camera {}: rotation is not orthonormal ({err:.2e})", self.id));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("camera {}: empty image", self.id));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray through the center of pixel `(u, v)`.
    pub fn ray(&self, u: i64, v: i64) -> Result<Ray> {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            return Err(Error::PixelOutOfImage {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.ray_through(u as f64 + 0.5, v as f64 + 0.5))
    }

    /// Ray through continuous image coordinates (pixel centers at `+0.5`).
    pub fn ray_through(&self, x: f64, y: f64) -> Ray {
        let d = Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0);
        Ray {
            origin: self.translation,
            dir: (self.rotation * d).normalize(),
        }
    }

    /// Continuous image coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.rotation.transpose() * (p - self.translation);
        (c.z > 1e-12).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    pub fn to_record(&self) -> CameraRecord {
        let r = &self.rotation;
        let t = &self.translation;
        let pose = vec![
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ];
        CameraRecord {
            id: self.id,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            pose,
            near: self.near,
            far: self.far,
        }
    }

    pub fn from_record(rec: &CameraRecord) -> Result<Self> {
        if rec.pose.len() != 16 {
            return Err(Error::InvalidConfig(format!(
                "camera {}: pose must have 16 entries, found {}",
                rec.id,
                rec.pose.len()
            )));
        }
        let p = &rec.pose;
        let cam = Self {
            id: rec.id,
            fx: rec.fx,
            fy: rec.fy,
            cx: rec.cx,
            cy: rec.cy,
            width: rec.width,
            height: rec.height,
            rotation: Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]),
            translation: Vec3::new(p[3], p[7], p[11]),
            near: rec.near,
            far: rec.far,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl Serialize for Camera {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Camera {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = CameraRecord::deserialize(d)?;
        Camera::from_record(&rec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_camera(fx: f64, cx: f64) -> Camera {
        Camera {
            id: 0,
            fx,
            fy: fx,
            cx,
            cy: 16.5,
            width: 64,
            height: 32,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            near: 0.1,
            far: 10.0,
        }
    }

    #[test]
    fn principal_point_looks_down_the_axis() {
        let cam = identity_camera(30.0, 16.5);
        let r = cam.ray(16, 16).unwrap();
        assert!((r.dir - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn pixel_one_focal_length_right_is_45_degrees() {
        let cam = identity_camera(20.0, 10.5);
        let r = cam.ray(30, 16).unwrap();
        let expected = Vec3::new(1.0, 0.0, 1.0).normalize();
        assert!((r.dir - expected).norm() < 1e-15);
    }

    #[test]
    fn back_projection_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let axis = Unit::new_normalize(Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
            let cam = Camera {
                id: 1,
                fx: rng.random_range(20.0..200.0),
                fy: rng.random_range(20.0..200.0),
                cx: rng.random_range(10.0..50.0),
                cy: rng.random_range(10.0..50.0),
                width: 64,
                height: 64,
                rotation: *rot.matrix(),
                translation: Vec3::new(rng.random_range(-5.0..5.0), 1.0, -2.0),
                near: 0.1,
                far: 10.0,
            };
            cam.validate().unwrap();
            let (u, v) = (rng.random_range(0..64), rng.random_range(0..64));
            let ray = cam.ray(u, v).unwrap();
            let p = ray.at(rng.random_range(0.5..8.0));
            let (x, y) = cam.project(&p).unwrap();
            assert!((x - (u as f64 + 0.5)).abs() < 1e-4 && (y - (v as f64 + 0.5)).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_pixels_outside_the_image() {
        let cam = identity_camera(30.0, 16.0);
        assert!(cam.ray(64, 0).is_err());
        assert!(cam.ray(-1, 0).is_err());
        assert!(cam.ray(0, 32).is_err());
    }

    #[test]
    fn record_round_trip_and_validation() {
        let cam = Camera::look_at(3, Vec3::new(2.0, -1.0, 1.5), Vec3::zeros(), 64, 48, 50.0);
        cam.validate().unwrap();
        let back = Camera::from_record(&cam.to_record()).unwrap();
        assert_eq!(back, cam);
        let mut rec = cam.to_record();
        rec.pose[0] = 2.0;
        assert!(Camera::from_record(&rec).is_err());
        let mut rec = cam.to_record();
        rec.near = 30.0;
        assert!(Camera::from_record(&rec).is_err());
    }

    #[test]
    fn look_at_centers_the_target() {
        let cam = Camera::look_at(0, Vec3::new(3.0, 1.0, 2.0), Vec3::new(0.0, 0.0, 0.3), 64, 64, 45.0);
        let (x, y) = cam.project(&Vec3::new(0.0, 0.0, 0.3)).unwrap();
        assert!((x - 32.0).abs() < 1e-9 && (y - 32.0).abs() < 1e-9);
        // world up projects upward in the image
        let (_, y_up) = cam.project(&Vec3::new(0.0, 0.0, 0.8)).unwrap();
        assert!(y_up < y);
    }
}
