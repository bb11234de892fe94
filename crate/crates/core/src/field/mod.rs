//! Learnable field parameters: dense multi-channel vertex grids plus the
//! relation fusion network, with forward evaluation and analytic gradients.

mod checkpoint;
mod fusion;
mod grid;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fusion::{FusionActivation, QueryProjection, RelationFusionNet};
pub use grid::{Aabb, Cell, FeatureGrid, GridConfig, HeadDims};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::math::{sigmoid, softplus, Vec3};

/// Squashed field values at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub color: [f64; 3],
    pub semantic: Vec<f64>,
    pub instance: Vec<f64>,
}

/// Initial parameter values.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldInit {
    pub density_raw: f64,
    pub feature_std: f64,
}

impl Default for FieldInit {
    fn default() -> Self {
        Self {
            density_raw: -3.0,
            feature_std: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Density,
    Color,
    Semantic,
    Instance,
    RelationInput,
    Fusion,
}

pub struct ParamBlockMut<'a> {
    pub name: &'static str,
    pub group: ParamGroup,
    pub values: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Names of the parameter blocks in checkpoint order.
pub const BLOCK_NAMES: [&str; 9] = [
    "density",
    "color",
    "semantic",
    "instance",
    "relation_input",
    "fusion.w1",
    "fusion.b1",
    "fusion.w2",
    "fusion.b2",
];

#[derive(Clone, Debug)]
pub struct RadianceField {
    pub config: GridConfig,
    pub density: FeatureGrid,
    pub color: FeatureGrid,
    pub semantic: FeatureGrid,
    pub instance: FeatureGrid,
    pub relation_input: FeatureGrid,
    pub fusion: RelationFusionNet,
}

impl RadianceField {
    /// All-zero parameters (density raw 0, features 0, zero network).
    pub fn zeros(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let (g, f, b) = (config.resolution, config.feature_resolution, config.bounds);
        Ok(Self {
            config,
            density: FeatureGrid::new(g, b, 1),
            color: FeatureGrid::new(g, b, 3),
            semantic: FeatureGrid::new(f, b, d.semantic),
            instance: FeatureGrid::new(f, b, d.instance),
            relation_input: FeatureGrid::new(f, b, d.relation_input),
            fusion: RelationFusionNet::zeros(d.relation_input, d.hidden, d.relation),
        })
    }

    pub fn new(config: GridConfig, init: FieldInit, seed: u64) -> Result<Self> {
        let mut field = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        field.density.values.fill(init.density_raw);
        let normal = Normal::new(0.0, init.feature_std).expect("finite std");
        for grid in [&mut field.semantic, &mut field.instance, &mut field.relation_input] {
            grid.values.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        let d = config.dims;
        field.fusion = RelationFusionNet::init(d.relation_input, d.hidden, d.relation, &mut rng);
        Ok(field)
    }

    pub fn bounds(&self) -> &Aabb {
        &self.config.bounds
    }

    pub fn sample_field(&self, p: &Vec3) -> Result<FieldSample> {
        let gc = self.density.cell(p)?;
        let fc = self.semantic.cell(p)?;
        let mut color = [0.0; 3];
        self.color.read_into(&gc, &mut color);
        let mut semantic = vec![0.0; self.semantic.channels];
        self.semantic.read_into(&fc, &mut semantic);
        let mut instance = vec![0.0; self.instance.channels];
        self.instance.read_into(&fc, &mut instance);
        Ok(FieldSample {
            sigma: softplus(self.density.read_scalar(&gc)),
            color: color.map(sigmoid),
            semantic,
            instance,
        })
    }

    pub fn relation_features(&self, p: &Vec3) -> Result<Vec<f64>> {
        self.relation_input.trilerp(p)
    }

    /// Relationship feature between a ray point and the query location `z`.
    pub fn relation_forward(&self, p_ray: &Vec3, z: &Vec3) -> Result<Vec<f64>> {
        let a = self.relation_input.trilerp(p_ray)?;
        let b = self.relation_input.trilerp(z)?;
        Ok(self.fusion.forward(&a, &b))
    }

    pub fn relation_backward(&mut self, p_ray: &Vec3, z: &Vec3, upstream: &[f64]) -> Result<()> {
        let ca = self.relation_input.cell(p_ray)?;
        let cb = self.relation_input.cell(z)?;
        let mut a = vec![0.0; self.relation_input.channels];
        let mut b = vec![0.0; self.relation_input.channels];
        self.relation_input.read_into(&ca, &mut a);
        self.relation_input.read_into(&cb, &mut b);
        let query = self.fusion.project_query(&b);
        let act = self.fusion.forward_with(&a, &query);
        let (d_a, d_pre) = self.fusion.backward(&act, upstream);
        let d_b = self.fusion.backward_query(&query, &d_pre);
        self.relation_input.accumulate(&ca, &d_a);
        self.relation_input.accumulate(&cb, &d_b);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for b in self.blocks_mut() {
            b.grad.fill(0.0);
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let f = &mut self.fusion;
        vec![
            ParamBlockMut {
                name: BLOCK_NAMES[0],
                group: ParamGroup::Density,
                values: &mut self.density.values,
                grad: &mut self.density.grad,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[1],
                group: ParamGroup::Color,
                values: &mut self.color.values,
                grad: &mut self.color.grad,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[2],
                group: ParamGroup::Semantic,
                values: &mut self.semantic.values,
                grad: &mut self.semantic.grad,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[3],
                group: ParamGroup::Instance,
                values: &mut self.instance.values,
                grad: &mut self.instance.grad,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[4],
                group: ParamGroup::RelationInput,
                values: &mut self.relation_input.values,
                grad: &mut self.relation_input.grad,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[5],
                group: ParamGroup::Fusion,
                values: &mut f.w1,
                grad: &mut f.grad_w1,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[6],
                group: ParamGroup::Fusion,
                values: &mut f.b1,
                grad: &mut f.grad_b1,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[7],
                group: ParamGroup::Fusion,
                values: &mut f.w2,
                grad: &mut f.grad_w2,
            },
            ParamBlockMut {
                name: BLOCK_NAMES[8],
                group: ParamGroup::Fusion,
                values: &mut f.b2,
                grad: &mut f.grad_b2,
            },
        ]
    }

    /// Parameter values in checkpoint order.
    pub fn blocks(&self) -> [(&'static str, &[f64]); 9] {
        let f = &self.fusion;
        [
            (BLOCK_NAMES[0], &self.density.values),
            (BLOCK_NAMES[1], &self.color.values),
            (BLOCK_NAMES[2], &self.semantic.values),
            (BLOCK_NAMES[3], &self.instance.values),
            (BLOCK_NAMES[4], &self.relation_input.values),
            (BLOCK_NAMES[5], &f.w1),
            (BLOCK_NAMES[6], &f.b1),
            (BLOCK_NAMES[7], &f.w2),
            (BLOCK_NAMES[8], &f.b2),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, v)| v.len()).sum()
    }

    /// Flat parameter access across all blocks, for gradient checking.
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for (_, v) in self.blocks() {
            if i < v.len() {
                return v[i];
            }
            i -= v.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for b in self.blocks_mut() {
            if i < b.values.len() {
                b.values[i] = value;
                return;
            }
            i -= b.values.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn grad(&mut self, index: usize) -> f64 {
        let mut i = index;
        for b in self.blocks_mut() {
            if i < b.values.len() {
                return b.grad[i];
            }
            i -= b.values.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GridConfig {
        GridConfig {
            resolution: [4, 4, 4],
            feature_resolution: [3, 4, 3],
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

    #[test]
    fn squashing_maps() {
        let mut f = RadianceField::zeros(small_config()).unwrap();
        f.density.values.fill(-20.0);
        f.semantic.values.chunks_mut(3).for_each(|c| c.copy_from_slice(&[0.1, -0.2, 0.3]));
        let s = f.sample_field(&Vec3::new(0.2, -0.4, 0.7)).unwrap();
        assert!((s.sigma - 2.061_153_6e-9).abs() < 1e-15);
        assert_eq!(s.color, [0.5; 3]);
        for (a, b) in s.semantic.iter().zip([0.1, -0.2, 0.3]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn relation_is_asymmetric_in_its_arguments() {
        let f = RadianceField::new(small_config(), FieldInit::default(), 9).unwrap();
        let a = Vec3::new(-0.5, 0.2, 0.1);
        let b = Vec3::new(0.6, -0.3, 0.4);
        let ab = f.relation_forward(&a, &b).unwrap();
        let ba = f.relation_forward(&b, &a).unwrap();
        assert!(ab.iter().zip(&ba).any(|(x, y)| (x - y).abs() > 1e-6));
        assert_eq!(ab, f.relation_forward(&a, &b).unwrap());
    }

    #[test]
    fn relation_backward_matches_finite_differences() {
        let mut f = RadianceField::new(small_config(), FieldInit { density_raw: 0.0, feature_std: 0.5 }, 4).unwrap();
        let p = Vec3::new(0.3, -0.1, 0.5);
        let z = Vec3::new(-0.7, 0.4, -0.2);
        let up = [0.3, -0.8, 0.5];
        f.zero_grad();
        f.relation_backward(&p, &z, &up).unwrap();
        let h = 1e-4;
        let loss = |f: &RadianceField| -> f64 {
            let r = f.relation_forward(&p, &z).unwrap();
            r.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let n = f.parameter_count();
        let mut checked = 0;
        for i in 0..n {
            let analytic = f.grad(i);
            let orig = f.param(i);
            f.set_param(i, orig + h);
            let lp = loss(&f);
            f.set_param(i, orig - h);
            let lm = loss(&f);
            f.set_param(i, orig);
            let fd = (lp - lm) / (2.0 * h);
            if fd == 0.0 && analytic == 0.0 {
                continue;
            }
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            assert!(rel < 1e-5, "param {i}: fd {fd} analytic {analytic}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn upstream_scaling_is_linear() {
        let mut f = RadianceField::new(small_config(), FieldInit::default(), 2).unwrap();
        let p = Vec3::new(0.3, -0.1, 0.5);
        let z = Vec3::new(-0.7, 0.4, -0.2);
        f.zero_grad();
        f.relation_backward(&p, &z, &[0.0; 3]).unwrap();
        assert!((0..f.parameter_count()).all(|i| f.grad(i) == 0.0));
        f.relation_backward(&p, &z, &[0.2, 0.1, -0.4]).unwrap();
        let once: Vec<f64> = (0..f.parameter_count()).map(|i| f.grad(i)).collect();
        f.zero_grad();
        f.relation_backward(&p, &z, &[0.4, 0.2, -0.8]).unwrap();
        for (i, g) in once.iter().enumerate() {
            assert!((f.grad(i) - 2.0 * g).abs() <= 1e-14 * g.abs().max(1.0));
        }
    }
}
