//! Losses, optimizer and the training schedule.

mod adam;
mod loss;
mod step;

pub use adam::{adam_step, AdamParams, AdamState};
pub use loss::{cosine_loss, instance_contrastive_loss, photometric_loss};
pub use step::{step_loss, Batch, LossConfig, LossTerms, PairSample, RaySample};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::raytrace::render_view;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::{save_checkpoint, Aabb, FieldInit, GridConfig, HeadDims, ParamGroup, RadianceField};
use crate::io;
use crate::math::cosine;
use crate::relation::{render_relation_cutoff, training_pair_to_supervision, PairResolution, RelationStore, UnrelatedPolicy};
use crate::render::{march, render_frame, Camera, Heads, RenderOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub density: f64,
    pub color: f64,
    pub semantic: f64,
    pub instance: f64,
    pub relation_input: f64,
    pub fusion: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            density: 2.0,
            color: 0.05,
            semantic: 0.05,
            instance: 0.05,
            relation_input: 0.02,
            fusion: 0.005,
        }
    }
}

impl LearningRates {
    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Density => self.density,
            ParamGroup::Color => self.color,
            ParamGroup::Semantic => self.semantic,
            ParamGroup::Instance => self.instance,
            ParamGroup::RelationInput => self.relation_input,
            ParamGroup::Fusion => self.fusion,
        }
    }
}

/// Contents of `train.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Steps of radiance-only optimization before the relation head trains.
    pub warmup: usize,
    pub rays_per_batch: usize,
    pub pairs_per_batch: usize,
    pub lr: LearningRates,
    pub adam: AdamParams,
    pub loss: LossConfig,
    pub resolution: [usize; 3],
    pub feature_resolution: [usize; 3],
    /// Field bounds; defaults to the dataset scene bounds.
    pub bounds: Option<Aabb>,
    pub instance_dim: usize,
    pub relation_input_dim: usize,
    pub hidden_dim: usize,
    pub init: FieldInit,
    pub unrelated: UnrelatedPolicy,
    /// Probe-view PSNR is logged every this many steps (0 disables it).
    pub probe_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            steps: 3000,
            warmup: 200,
            rays_per_batch: 512,
            pairs_per_batch: 128,
            lr: LearningRates::default(),
            adam: AdamParams::default(),
            loss: LossConfig::default(),
            resolution: g.resolution,
            feature_resolution: g.feature_resolution,
            bounds: None,
            instance_dim: g.dims.instance,
            relation_input_dim: g.dims.relation_input,
            hidden_dim: g.dims.hidden,
            init: FieldInit::default(),
            unrelated: UnrelatedPolicy::NonePhrase,
            probe_every: 250,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.steps <= self.warmup && self.warmup != usize::MAX {
            return bad("steps must exceed warmup");
        }
        let l = &self.loss;
        if [l.lambda_rgb, l.lambda_sem, l.lambda_inst, l.lambda_rel, l.lambda_depth].iter().any(|x| !(*x >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        let r = &self.lr;
        if [r.density, r.color, r.semantic, r.instance, r.relation_input, r.fusion].iter().any(|x| !(*x > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.loss.samples == 0 {
            return bad("samples per ray must be positive");
        }
        Ok(())
    }

    /// Field layout for a dataset's embedding dimensions.
    pub fn grid_config(&self, ds: &Dataset) -> GridConfig {
        GridConfig {
            resolution: self.resolution,
            feature_resolution: self.feature_resolution,
            bounds: self
                .bounds
                .or_else(|| ds.scene.as_ref().map(|s| s.bounds))
                .unwrap_or(GridConfig::default().bounds),
            dims: HeadDims {
                semantic: ds.semantic_dim(),
                instance: self.instance_dim,
                relation: ds.relation_dim(),
                relation_input: self.relation_input_dim,
                hidden: self.hidden_dim,
            },
        }
    }

    pub fn relation_active(&self, step: usize) -> bool {
        self.loss.lambda_rel > 0.0 && step >= self.warmup
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub terms: LossTerms,
    pub psnr: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,total,rgb,semantic,instance,relation,depth,pairs_used,pairs_no_target,pairs_no_hit,psnr";

impl MetricsRow {
    pub fn csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{},{},{},{}",
            self.step,
            t.total,
            t.rgb,
            t.semantic,
            t.instance,
            t.relation,
            t.depth,
            t.pairs_used,
            t.pairs_no_target,
            t.pairs_no_hit,
            self.psnr.map(|p| format!("{p:.4}")).unwrap_or_default()
        )
    }
}

pub struct TrainOutcome {
    pub field: RadianceField,
    pub metrics: Vec<MetricsRow>,
}

pub fn psnr(rendered: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    let n = 3.0 * rendered.len() as f64;
    let mse: f64 = rendered
        .iter()
        .zip(target)
        .map(|(a, b)| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    -10.0 * mse.max(1e-20).log10()
}

/// PSNR of a rendered view against its analytic ground truth.
pub fn view_psnr(field: &RadianceField, ds: &Dataset, camera: &Camera, samples: usize) -> Result<f64> {
    let opts = RenderOptions {
        samples,
        ..Default::default()
    };
    let frame = render_frame(field, camera, Heads::COLOR, &opts)?;
    let target: Vec<[f64; 3]> = match &ds.scene {
        Some(scene) => render_view(scene, camera).rgb,
        None => {
            let i = ds.cameras.iter().position(|c| c.id == camera.id).ok_or_else(|| Error::InvalidConfig(format!("no image for camera {}", camera.id)))?;
            (0..ds.images[i].pixel_count()).map(|p| ds.images[i].rgb_at(p)).collect()
        }
    };
    Ok(psnr(frame.color.as_ref().expect("color requested"), &target))
}

fn probe_camera(ds: &Dataset) -> Camera {
    ds.heldout_cameras(1).into_iter().next().filter(|_| ds.scene.is_some()).unwrap_or_else(|| ds.cameras[0].clone())
}

pub fn sample_batch(ds: &Dataset, store: &RelationStore, cfg: &TrainConfig, step: usize, ray_rng: &mut ChaCha8Rng, pair_rng: &mut ChaCha8Rng) -> Result<Batch> {
    let mut batch = Batch::default();
    for _ in 0..cfg.rays_per_batch {
        let image = ray_rng.random_range(0..ds.images.len());
        let pixel = ray_rng.random_range(0..ds.images[image].pixel_count());
        batch.rays.push(RaySample {
            image,
            pixel,
            seed: ray_rng.random(),
        });
    }
    if cfg.relation_active(step) {
        for pair in store.sample_pairs(cfg.pairs_per_batch, pair_rng)? {
            batch.pairs.push(PairSample { pair, seed: pair_rng.random() });
        }
    }
    Ok(batch)
}

/// Trains a field on `ds`; `observe` sees every metrics row as it is produced.
pub fn train(ds: &Dataset, cfg: &TrainConfig, mut observe: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.images.is_empty() {
        return Err(Error::InvalidConfig("dataset has no images".into()));
    }
    let mut field = RadianceField::new(cfg.grid_config(ds), cfg.init, cfg.seed)?;
    let store = RelationStore::from_dataset(ds, cfg.unrelated)?;
    let mut ray_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut states: Vec<AdamState> = field.blocks_mut().iter().map(|b| AdamState::new(b.values.len())).collect();
    let probe = probe_camera(ds);
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_batch(ds, &store, cfg, step, &mut ray_rng, &mut pair_rng)?;
        field.zero_grad();
        let mut loss_cfg = cfg.loss;
        if !cfg.relation_active(step) {
            loss_cfg.lambda_rel = 0.0;
        }
        let terms = step_loss(&mut field, ds, &store, &batch, &loss_cfg, true)?;
        if !terms.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                terms: terms.describe(),
            });
        }
        let relation_on = cfg.relation_active(step);
        for (b, s) in field.blocks_mut().into_iter().zip(states.iter_mut()) {
            if matches!(b.group, ParamGroup::RelationInput | ParamGroup::Fusion) && !relation_on {
                continue;
            }
            adam_step(b.values, b.grad, s, cfg.lr.for_group(b.group), &cfg.adam);
        }
        if !field.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                terms: format!("non-finite parameters after update; {}", terms.describe()),
            });
        }
        let last = step + 1 == cfg.steps;
        let psnr = (cfg.probe_every > 0 && ((step + 1) % cfg.probe_every == 0 || last))
            .then(|| view_psnr(&field, ds, &probe, cfg.loss.samples))
            .transpose()?;
        let row = MetricsRow { step, terms, psnr };
        observe(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome { field, metrics })
}

/// Mean cosine between rendered relation features and their targets over
/// `n` supervision pairs drawn with `seed` (no jitter).
pub fn relation_cosine(field: &RadianceField, ds: &Dataset, store: &RelationStore, cfg: &LossConfig, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = store.sample_pairs(n, &mut rng)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in &pairs {
        let cam = &ds.cameras[p.image];
        let PairResolution::Ready(sup) = training_pair_to_supervision(field, store, cam, p, cfg.invert_direction, cfg.samples, cfg.hit_threshold)? else {
            continue;
        };
        let m = march::<ChaCha8Rng>(field, &sup.ray, cam.near, cam.far, cfg.samples, None)?;
        let r = render_relation_cutoff(field, &m, &sup.z, 0.0)?;
        total += cosine(&r, &sup.target);
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoAnnotatedPixels);
    }
    Ok(total / count as f64)
}

/// Writes `checkpoint.rfld` (+ manifest), `train.json` and `metrics.csv` into `out`.
pub fn write_training_outputs(out: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_checkpoint(&outcome.field, &out.join("checkpoint.rfld"))?;
    io::write_json(&out.join("train.json"), cfg)?;
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for r in &outcome.metrics {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    io::write_file(&out.join("metrics.csv"), csv.as_bytes())
}
