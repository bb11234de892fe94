//! One optimization step's loss and its exact gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{cosine_loss, instance_contrastive_loss, photometric_loss};
use crate::data::Dataset;
use crate::error::Result;
use crate::field::{Cell, FusionActivation, QueryProjection, RadianceField};
use crate::math::{dot, sigmoid, to_f64};
use crate::relation::{training_pair_to_supervision, PairResolution, PixelPair, RelationStore, Supervision};
use crate::render::{composite_values, march, sample_colors, sample_features, sigma_gradient, RayMarch};

/// Loss weights and sampling settings used inside a step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_rgb: f64,
    pub lambda_sem: f64,
    pub lambda_inst: f64,
    pub lambda_rel: f64,
    /// Weight of the optional expected-depth loss; 0 disables it.
    pub lambda_depth: f64,
    pub margin: f64,
    pub samples: usize,
    pub hit_threshold: f64,
    pub background: [f64; 3],
    /// Relation samples with a smaller weight are left out of the sum.
    pub relation_cutoff: f64,
    /// Propagate the relation loss into the query location.
    pub query_gradient: bool,
    /// Train the inverted direction (subject under the rendered ray).
    pub invert_direction: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_rgb: 1.0,
            lambda_sem: 0.1,
            lambda_inst: 0.1,
            lambda_rel: 0.5,
            lambda_depth: 0.0,
            margin: 1.0,
            samples: 64,
            hit_threshold: 0.5,
            background: [1.0; 3],
            relation_cutoff: 1e-4,
            query_gradient: true,
            invert_direction: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RaySample {
    pub image: usize,
    pub pixel: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub pair: PixelPair,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub rays: Vec<RaySample>,
    pub pairs: Vec<PairSample>,
}

/// Unweighted loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub rgb: f64,
    pub semantic: f64,
    pub instance: f64,
    pub relation: f64,
    pub depth: f64,
    pub pairs_used: usize,
    pub pairs_no_target: usize,
    pub pairs_no_hit: usize,
}

impl LossTerms {
    pub fn all_finite(&self) -> bool {
        [self.total, self.rgb, self.semantic, self.instance, self.relation, self.depth]
            .iter()
            .all(|x| x.is_finite())
    }

    pub fn describe(&self) -> String {
        format!(
            "total={} rgb={} semantic={} instance={} relation={} depth={}",
            self.total, self.rgb, self.semantic, self.instance, self.relation, self.depth
        )
    }
}

struct RayForward {
    m: RayMarch,
    colors: Vec<f64>,
    rgb: Vec<f64>,
    target: [f64; 3],
    background: [f64; 3],
    semantic: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    instance: Option<(Vec<f64>, Vec<f64>, u16)>,
    depth: Option<(f64, f64, f64)>,
}

fn ray_forward(field: &RadianceField, ds: &Dataset, s: &RaySample, cfg: &LossConfig) -> Result<RayForward> {
    let img = &ds.images[s.image];
    let cam = &ds.cameras[s.image];
    let (u, v) = (s.pixel % img.width, s.pixel / img.width);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let ray = cam.ray(u as i64, v as i64)?;
    let m = march(field, &ray, cam.near, cam.far, cfg.samples, Some(&mut rng))?;
    let seg = img.segmap[s.pixel];
    let gt_depth = img.depth.as_ref().map(|d| d[s.pixel] as f64);
    let (background, target) = (cfg.background, img.rgb_at(s.pixel));
    let colors = sample_colors(field, &m);
    let rgb = composite_values(&m.weights, m.transmittance, &colors, 3, &background);
    let surface = gt_depth.map_or(seg != 0, |d| d > 0.0);
    let semantic = match (&img.semfeat, cfg.lambda_sem > 0.0 && surface) {
        (Some(sf), true) => {
            let d = field.semantic.channels;
            let vals = sample_features(&field.semantic, &m);
            let rendered = composite_values(&m.weights, m.transmittance, &vals, d, &vec![0.0; d]);
            Some((vals, rendered, to_f64(&sf[s.pixel * d..(s.pixel + 1) * d])))
        }
        _ => None,
    };
    let instance = (cfg.lambda_inst > 0.0 && seg != 0).then(|| {
        let d = field.instance.channels;
        let vals = sample_features(&field.instance, &m);
        let rendered = composite_values(&m.weights, m.transmittance, &vals, d, &vec![0.0; d]);
        (vals, rendered, seg)
    });
    let depth = match gt_depth {
        Some(gt) if cfg.lambda_depth > 0.0 && gt > 0.0 => {
            let w: f64 = m.weights.iter().sum();
            (w > 1e-9).then(|| (m.weights.iter().zip(&m.depths).map(|(a, t)| a * t).sum::<f64>() / w, gt, w))
        }
        _ => None,
    };
    Ok(RayForward {
        m,
        colors,
        rgb,
        target,
        background,
        semantic,
        instance,
        depth,
    })
}

struct RayUpstream {
    rgb: Vec<f64>,
    semantic: Option<Vec<f64>>,
    instance: Option<Vec<f64>>,
    depth: f64,
}

struct RayGrad {
    density: Vec<f64>,
    color: Vec<[f64; 3]>,
    semantic: Option<Vec<f64>>,
    instance: Option<Vec<f64>>,
}

fn ray_backward(field: &RadianceField, f: &RayForward, up: &RayUpstream) -> RayGrad {
    let m = &f.m;
    let n = m.len();
    let mut proj = vec![0.0; n];
    let mut color = Vec::with_capacity(n);
    for k in 0..n {
        let c = &f.colors[3 * k..3 * k + 3];
        proj[k] = dot(c, &up.rgb);
        let w = m.weights[k];
        color.push(std::array::from_fn(|i| w * up.rgb[i] * c[i] * (1.0 - c[i])));
    }
    let feature_grad = |vals: &[f64], g: &Option<Vec<f64>>, proj: &mut [f64]| {
        g.as_ref().map(|g| {
            let d = g.len();
            let mut out = vec![0.0; n * d];
            for k in 0..n {
                proj[k] += dot(&vals[k * d..(k + 1) * d], g);
                for i in 0..d {
                    out[k * d + i] = m.weights[k] * g[i];
                }
            }
            out
        })
    };
    let semantic = f.semantic.as_ref().and_then(|(vals, _, _)| feature_grad(vals, &up.semantic, &mut proj));
    let instance = f.instance.as_ref().and_then(|(vals, _, _)| feature_grad(vals, &up.instance, &mut proj));
    if let Some((z, _, w)) = f.depth {
        for k in 0..n {
            proj[k] += up.depth * (m.depths[k] - z) / w;
        }
    }
    let bg = dot(&f.background, &up.rgb);
    let dsig = sigma_gradient(&m.sigmas, &m.deltas, &m.weights, m.transmittance, &proj, bg);
    let density = (0..n)
        .map(|k| dsig[k] * sigmoid(field.density.read_scalar(&m.geo_cells[k])))
        .collect();
    RayGrad {
        density,
        color,
        semantic,
        instance,
    }
}

fn apply_ray_grad(field: &mut RadianceField, m: &RayMarch, g: &RayGrad) {
    for k in 0..m.len() {
        field.density.accumulate_scalar(&m.geo_cells[k], g.density[k]);
        field.color.accumulate(&m.geo_cells[k], &g.color[k]);
    }
    if let Some(s) = &g.semantic {
        let d = field.semantic.channels;
        for k in 0..m.len() {
            field.semantic.accumulate(&m.feat_cells[k], &s[k * d..(k + 1) * d]);
        }
    }
    if let Some(s) = &g.instance {
        let d = field.instance.channels;
        for k in 0..m.len() {
            field.instance.accumulate(&m.feat_cells[k], &s[k * d..(k + 1) * d]);
        }
    }
}

struct PairForward {
    sup: Supervision,
    m: RayMarch,
    z_cell: Cell,
    query: QueryProjection,
    used: Vec<(usize, FusionActivation)>,
    r: Vec<f64>,
}

enum PairOutcome {
    Ready(Box<PairForward>),
    NoTarget,
    NoHit,
}

fn pair_forward(field: &RadianceField, ds: &Dataset, store: &RelationStore, p: &PairSample, cfg: &LossConfig) -> Result<PairOutcome> {
    let cam = &ds.cameras[p.pair.image];
    let sup = match training_pair_to_supervision(field, store, cam, &p.pair, cfg.invert_direction, cfg.samples, cfg.hit_threshold)? {
        PairResolution::Ready(s) => s,
        PairResolution::NoTarget => return Ok(PairOutcome::NoTarget),
        PairResolution::NoHit => return Ok(PairOutcome::NoHit),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let m = march(field, &sup.ray, cam.near, cam.far, cfg.samples, Some(&mut rng))?;
    let z_cell = field.relation_input.cell(&sup.z)?;
    let mut zf = vec![0.0; field.relation_input.channels];
    field.relation_input.read_into(&z_cell, &mut zf);
    let query = field.fusion.project_query(&zf);
    let mut r = vec![0.0; field.fusion.output];
    let mut used = Vec::new();
    let mut feat = vec![0.0; field.relation_input.channels];
    for k in 0..m.len() {
        let w = m.weights[k];
        if w <= cfg.relation_cutoff || w == 0.0 {
            continue;
        }
        field.relation_input.read_into(&m.feat_cells[k], &mut feat);
        let act = field.fusion.forward_with(&feat, &query);
        for (o, v) in r.iter_mut().zip(&act.output) {
            *o += w * v;
        }
        used.push((k, act));
    }
    Ok(PairOutcome::Ready(Box::new(PairForward {
        sup,
        m,
        z_cell,
        query,
        used,
        r,
    })))
}

fn pair_backward(field: &mut RadianceField, f: &PairForward, g_r: &[f64], cfg: &LossConfig) -> Result<()> {
    let m = &f.m;
    let mut proj = vec![0.0; m.len()];
    let mut d_pre_sum = vec![0.0; field.fusion.hidden];
    for (k, act) in &f.used {
        let w = m.weights[*k];
        let up: Vec<f64> = g_r.iter().map(|g| w * g).collect();
        let (d_ray, d_pre) = field.fusion.backward(act, &up);
        field.relation_input.accumulate(&m.feat_cells[*k], &d_ray);
        for (a, b) in d_pre_sum.iter_mut().zip(&d_pre) {
            *a += b;
        }
        proj[*k] = dot(g_r, &act.output);
    }
    let d_zf = field.fusion.backward_query(&f.query, &d_pre_sum);
    field.relation_input.accumulate(&f.z_cell, &d_zf);
    let dsig = sigma_gradient(&m.sigmas, &m.deltas, &m.weights, m.transmittance, &proj, 0.0);
    for k in 0..m.len() {
        let raw = field.density.read_scalar(&m.geo_cells[k]);
        field.density.accumulate_scalar(&m.geo_cells[k], dsig[k] * sigmoid(raw));
    }
    if cfg.query_gradient {
        let qm = &f.sup.query_march;
        let jac = field.relation_input.spatial_gradient(&f.sup.z)?;
        let mut dz = [0.0; 3];
        for (ch, j) in jac.iter().enumerate() {
            for a in 0..3 {
                dz[a] += d_zf[ch] * j[a];
            }
        }
        let dir = qm.ray.dir;
        let dt = dz[0] * dir.x + dz[1] * dir.y + dz[2] * dir.z;
        if dt != 0.0 {
            let w: f64 = qm.weights.iter().sum();
            let tbar = qm.weights.iter().zip(&qm.depths).map(|(a, t)| a * t).sum::<f64>() / w;
            let qproj: Vec<f64> = qm.depths.iter().map(|t| dt * (t - tbar) / w).collect();
            let qsig = sigma_gradient(&qm.sigmas, &qm.deltas, &qm.weights, qm.transmittance, &qproj, 0.0);
            for k in 0..qm.len() {
                let raw = field.density.read_scalar(&qm.geo_cells[k]);
                field.density.accumulate_scalar(&qm.geo_cells[k], qsig[k] * sigmoid(raw));
            }
        }
    }
    Ok(())
}

/// Evaluates the step loss on `batch`. With `backward`, the exact gradient
/// of the weighted total is added to the field's accumulators, reduced in
/// batch order.
pub fn step_loss(field: &mut RadianceField, ds: &Dataset, store: &RelationStore, batch: &Batch, cfg: &LossConfig, backward: bool) -> Result<LossTerms> {
    let mut terms = LossTerms::default();
    let fwd: Vec<RayForward> = batch
        .rays
        .par_iter()
        .map(|s| ray_forward(field, ds, s, cfg))
        .collect::<Result<_>>()?;
    let nr = fwd.len();
    let mut ups: Vec<RayUpstream> = (0..nr)
        .map(|_| RayUpstream {
            rgb: vec![0.0; 3],
            semantic: None,
            instance: None,
            depth: 0.0,
        })
        .collect();
    if nr > 0 {
        let rendered: Vec<f64> = fwd.iter().flat_map(|f| f.rgb.iter().copied()).collect();
        let target: Vec<f64> = fwd.iter().flat_map(|f| f.target).collect();
        let (l, g) = photometric_loss(&rendered, &target);
        terms.rgb = l;
        for (i, u) in ups.iter_mut().enumerate() {
            u.rgb = g[3 * i..3 * i + 3].iter().map(|x| cfg.lambda_rgb * x).collect();
        }
    }
    let sem_idx: Vec<usize> = (0..nr).filter(|&i| fwd[i].semantic.is_some()).collect();
    if !sem_idx.is_empty() {
        let scale = cfg.lambda_sem / sem_idx.len() as f64;
        for &i in &sem_idx {
            let (_, rendered, target) = fwd[i].semantic.as_ref().unwrap();
            let (l, g) = cosine_loss(rendered, target);
            terms.semantic += l / sem_idx.len() as f64;
            ups[i].semantic = Some(g.iter().map(|x| scale * x).collect());
        }
    }
    let inst_idx: Vec<usize> = (0..nr).filter(|&i| fwd[i].instance.is_some()).collect();
    if inst_idx.len() >= 2 {
        let embs: Vec<Vec<f64>> = inst_idx.iter().map(|&i| fwd[i].instance.as_ref().unwrap().1.clone()).collect();
        let ids: Vec<u16> = inst_idx.iter().map(|&i| fwd[i].instance.as_ref().unwrap().2).collect();
        let (l, g) = instance_contrastive_loss(&embs, &ids, cfg.margin);
        terms.instance = l;
        for (j, &i) in inst_idx.iter().enumerate() {
            ups[i].instance = Some(g[j].iter().map(|x| cfg.lambda_inst * x).collect());
        }
    }
    let depth_idx: Vec<usize> = (0..nr).filter(|&i| fwd[i].depth.is_some()).collect();
    if !depth_idx.is_empty() {
        let n = depth_idx.len() as f64;
        for &i in &depth_idx {
            let (z, gt, _) = fwd[i].depth.unwrap();
            terms.depth += (z - gt) * (z - gt) / n;
            ups[i].depth = cfg.lambda_depth * 2.0 * (z - gt) / n;
        }
    }

    let pair_fwd: Vec<PairOutcome> = if cfg.lambda_rel > 0.0 {
        batch
            .pairs
            .par_iter()
            .map(|p| pair_forward(field, ds, store, p, cfg))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let ready: Vec<&PairForward> = pair_fwd
        .iter()
        .filter_map(|o| match o {
            PairOutcome::Ready(f) => Some(f.as_ref()),
            PairOutcome::NoTarget => {
                terms.pairs_no_target += 1;
                None
            }
            PairOutcome::NoHit => {
                terms.pairs_no_hit += 1;
                None
            }
        })
        .collect();
    terms.pairs_used = ready.len();
    let mut pair_grads = Vec::with_capacity(ready.len());
    for f in &ready {
        let (l, g) = cosine_loss(&f.r, &f.sup.target);
        terms.relation += l / ready.len() as f64;
        let scale = cfg.lambda_rel / ready.len() as f64;
        pair_grads.push(g.iter().map(|x| scale * x).collect::<Vec<f64>>());
    }

    terms.total = cfg.lambda_rgb * terms.rgb
        + cfg.lambda_sem * terms.semantic
        + cfg.lambda_inst * terms.instance
        + cfg.lambda_rel * terms.relation
        + cfg.lambda_depth * terms.depth;

    if backward {
        let frozen: &RadianceField = field;
        let grads: Vec<RayGrad> = fwd
            .par_iter()
            .zip(ups.par_iter())
            .map(|(f, u)| ray_backward(frozen, f, u))
            .collect();
        for (f, g) in fwd.iter().zip(&grads) {
            apply_ray_grad(field, &f.m, g);
        }
        for (f, g) in ready.iter().zip(&pair_grads) {
            pair_backward(field, f, g, cfg)?;
        }
    }
    Ok(terms)
}
