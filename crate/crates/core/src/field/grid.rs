use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Axis-aligned box in scene units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn max_extent(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Slab test; returns the parametric interval `[t0, t1]` with `t1 > t0`
    /// where the ray is inside the box.
    pub fn intersect_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (self.min[a] - origin[a]) * inv;
            let mut tb = (self.max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// Per-head channel widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    pub semantic: usize,
    pub instance: usize,
    pub relation: usize,
    pub relation_input: usize,
    pub hidden: usize,
}

impl Default for HeadDims {
    fn default() -> Self {
        Self {
            semantic: 16,
            instance: 8,
            relation: 16,
            relation_input: 16,
            hidden: 32,
        }
    }
}

/// Layout of all field grids. Density and color live on `resolution`;
/// semantic, instance and relation-input features on `feature_resolution`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub resolution: [usize; 3],
    pub feature_resolution: [usize; 3],
    pub bounds: Aabb,
    pub dims: HeadDims,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: [48, 48, 32],
            feature_resolution: [32, 32, 20],
            bounds: Aabb::new([-1.0, -1.0, -0.05], [1.0, 1.0, 1.2]),
            dims: HeadDims::default(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.resolution.iter().chain(&self.feature_resolution).any(|&r| r < 2) {
            return bad("grid resolution must be at least 2 per axis");
        }
        if self.bounds.extent().iter().any(|&e| !(e > 0.0)) {
            return bad("bounds must have positive extent on every axis");
        }
        let d = &self.dims;
        if [d.semantic, d.instance, d.relation, d.relation_input, d.hidden].contains(&0) {
            return bad("all channel counts must be at least 1");
        }
        Ok(())
    }
}

/// Trilinear footprint of a point: the 8 enclosing vertex indices and their
/// weights. Corner `k` uses bit 0 for x, bit 1 for y and bit 2 for z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub vertex: [usize; 8],
    pub weight: [f64; 8],
}

/// Dense vertex grid of learnable vectors, indexed `(ix, iy, iz, channel)`.
#[derive(Clone, Debug)]
pub struct FeatureGrid {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub channels: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(resolution: [usize; 3], bounds: Aabb, channels: usize) -> Self {
        let n = resolution.iter().product::<usize>() * channels;
        Self {
            resolution,
            bounds,
            channels,
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn filled(resolution: [usize; 3], bounds: Aabb, channels: usize, value: f64) -> Self {
        let mut g = Self::new(resolution, bounds, channels);
        g.values.fill(value);
        g
    }

    pub fn vertex_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn vertex_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [nx, ny, _] = self.resolution;
        (iz * ny + iy) * nx + ix
    }

    pub fn vertex_position(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let e = self.bounds.extent();
        let idx = [ix, iy, iz];
        Vec3::from_fn(|a, _| {
            self.bounds.min[a] + e[a] * idx[a] as f64 / (self.resolution[a] - 1) as f64
        })
    }

    /// Largest vertex spacing along any axis.
    pub fn max_cell_edge(&self) -> f64 {
        let e = self.bounds.extent();
        (0..3).map(|a| e[a] / (self.resolution[a] - 1) as f64).fold(0.0, f64::max)
    }

    pub fn vertex(&self, index: usize) -> &[f64] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn vertex_mut(&mut self, index: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.values[index * c..(index + 1) * c]
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Trilinear footprint of `p`. Points up to one voxel outside the bounds
    /// are clamped onto the boundary; anything further out is an error.
    pub fn cell(&self, p: &Vec3) -> Result<Cell> {
        let e = self.bounds.extent();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let g = (p[a] - self.bounds.min[a]) / e[a] * (n - 1) as f64;
            if !(g >= -1.0 && g <= n as f64) {
                return Err(Error::OutOfBounds {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                });
            }
            let g = g.clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let mut cell = Cell {
            vertex: [0; 8],
            weight: [0.0; 8],
        };
        for k in 0..8 {
            let (bx, by, bz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
            cell.vertex[k] = self.vertex_index(base[0] + bx, base[1] + by, base[2] + bz);
            let wx = if bx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if by == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if bz == 1 { frac[2] } else { 1.0 - frac[2] };
            cell.weight[k] = wx * wy * wz;
        }
        Ok(cell)
    }

    /// Interpolated channel vector for a precomputed footprint, written to `out`.
    pub fn read_into(&self, cell: &Cell, out: &mut [f64]) {
        let c = self.channels;
        out[..c].fill(0.0);
        for k in 0..8 {
            let w = cell.weight[k];
            if w == 0.0 {
                continue;
            }
            let v = &self.values[cell.vertex[k] * c..(cell.vertex[k] + 1) * c];
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
    }

    /// Scalar read of channel 0.
    pub fn read_scalar(&self, cell: &Cell) -> f64 {
        let c = self.channels;
        (0..8).map(|k| cell.weight[k] * self.values[cell.vertex[k] * c]).sum()
    }

    pub fn trilerp(&self, p: &Vec3) -> Result<Vec<f64>> {
        let cell = self.cell(p)?;
        let mut out = vec![0.0; self.channels];
        self.read_into(&cell, &mut out);
        Ok(out)
    }

    /// Scatters `upstream` into the gradient accumulator with trilinear weights.
    pub fn accumulate(&mut self, cell: &Cell, upstream: &[f64]) {
        let c = self.channels;
        for k in 0..8 {
            let w = cell.weight[k];
            if w == 0.0 {
                continue;
            }
            let g = &mut self.grad[cell.vertex[k] * c..(cell.vertex[k] + 1) * c];
            for (gi, u) in g.iter_mut().zip(upstream) {
                *gi += w * u;
            }
        }
    }

    pub fn accumulate_scalar(&mut self, cell: &Cell, upstream: f64) {
        let c = self.channels;
        for k in 0..8 {
            self.grad[cell.vertex[k] * c] += cell.weight[k] * upstream;
        }
    }

    /// Derivative of the interpolated value with respect to the position,
    /// `[d/dx, d/dy, d/dz]` per channel. Zero along clamped axes.
    pub fn spatial_gradient(&self, p: &Vec3) -> Result<Vec<[f64; 3]>> {
        let e = self.bounds.extent();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut scale = [0.0f64; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let g = (p[a] - self.bounds.min[a]) / e[a] * (n - 1) as f64;
            if !(g >= -1.0 && g <= n as f64) {
                return Err(Error::OutOfBounds {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                });
            }
            let inside = g > 0.0 && g < (n - 1) as f64;
            let g = g.clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
            scale[a] = if inside { (n - 1) as f64 / e[a] } else { 0.0 };
        }
        let c = self.channels;
        let mut out = vec![[0.0; 3]; c];
        for k in 0..8 {
            let b = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            let w: [f64; 3] = std::array::from_fn(|a| if b[a] == 1 { frac[a] } else { 1.0 - frac[a] });
            let dw: [f64; 3] = std::array::from_fn(|a| if b[a] == 1 { scale[a] } else { -scale[a] });
            let d = [dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]];
            let vi = self.vertex_index(base[0] + b[0], base[1] + b[1], base[2] + b[2]);
            for (ch, o) in out.iter_mut().enumerate() {
                let v = self.values[vi * c + ch];
                for a in 0..3 {
                    o[a] += d[a] * v;
                }
            }
        }
        Ok(out)
    }

    pub fn trilerp_backward(&mut self, p: &Vec3, upstream: &[f64]) -> Result<()> {
        let cell = self.cell(p)?;
        self.accumulate(&cell, upstream);
        Ok(())
    }
}
