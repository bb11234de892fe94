//! File-level pipeline stages shared by the command-line tool and examples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CameraRing, Dataset, DatasetConfig, RandomSceneParams, SceneSpec};
use crate::error::{Error, Result};
use crate::field::{load_checkpoint, RadianceField};
use crate::graph::{extract_graph, read_ply, sample_points, table_labels, GraphOptions, GraphVocab, PointSource, SamplingOptions, SceneGraph};
use crate::io;
use crate::query::{click_to_query, query_object, query_relation, Direction, Domain, QueryOptions, QueryResult, QueryVector, RelevancyConfig};
use crate::train::{train, write_training_outputs, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// A sphere standing on a box.
    #[default]
    Demo,
    /// Seeded random tabletop with 4-6 objects.
    Random,
    /// Ten instances and 200 views with wide relation features.
    TenInstance,
}

impl Preset {
    pub fn dataset_config(self) -> DatasetConfig {
        match self {
            Preset::Demo => DatasetConfig::default(),
            Preset::Random => DatasetConfig {
                cameras: CameraRing::wide(),
                ..Default::default()
            },
            Preset::TenInstance => DatasetConfig {
                cameras: CameraRing {
                    count: 200,
                    ..CameraRing::wide()
                },
                relation_dim: 512,
                ..Default::default()
            },
        }
    }
}

/// Contents of a `generate --config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub preset: Preset,
    /// Explicit scene; overrides the preset's scene.
    pub scene: Option<SceneSpec>,
    pub random: RandomSceneParams,
    /// Overrides the preset's dataset settings.
    pub dataset: Option<DatasetConfig>,
}

impl GenerateConfig {
    pub fn scene(&self, seed: u64) -> Result<SceneSpec> {
        Ok(match (&self.scene, self.preset) {
            (Some(s), _) => s.clone(),
            (None, Preset::Demo) => SceneSpec::demo(),
            (None, Preset::Random) => SceneSpec::random(&self.random, seed)?,
            (None, Preset::TenInstance) => SceneSpec::ten_instance(),
        })
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        self.dataset.clone().unwrap_or_else(|| self.preset.dataset_config())
    }
}

pub fn read_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), io::read_json)
}

pub fn generate(cfg: &GenerateConfig, seed: u64, out: &Path) -> Result<Dataset> {
    let ds = Dataset::generate(&cfg.scene(seed)?, &cfg.dataset_config(), seed)?;
    ds.save(out)?;
    Ok(ds)
}

pub fn train_run(data: &Path, cfg: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    let ds = Dataset::load(data)?;
    let outcome = train(&ds, cfg, |row| {
        if let Some(p) = row.psnr {
            log::info!("step {} loss {:.5} psnr {:.2}", row.step, row.terms.total, p);
        }
    })?;
    write_training_outputs(out, cfg, &outcome)?;
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Surfaces,
    Density,
}

/// Contents of a `graph --config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub graph: GraphOptions,
    pub sampling: SamplingOptions,
    pub source: SourceKind,
    pub camera_stride: usize,
    pub pixel_stride: usize,
    pub density_quantile: f64,
    pub min_sigma: f64,
    /// ASCII PLY cloud; replaces `source`.
    pub points: Option<PathBuf>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            graph: GraphOptions::default(),
            sampling: SamplingOptions::default(),
            source: SourceKind::Surfaces,
            camera_stride: 3,
            pixel_stride: 2,
            density_quantile: 0.97,
            min_sigma: 1.0,
            points: None,
        }
    }
}

impl GraphConfig {
    pub fn source(&self, ds: &Dataset) -> Result<PointSource> {
        if let Some(p) = &self.points {
            return Ok(PointSource::Cloud(read_ply(p)?));
        }
        Ok(match self.source {
            SourceKind::Surfaces => PointSource::Surfaces {
                cameras: ds.cameras.iter().step_by(self.camera_stride.max(1)).cloned().collect(),
                stride: self.pixel_stride,
            },
            SourceKind::Density => PointSource::DensityQuantile {
                quantile: self.density_quantile,
                min_sigma: self.min_sigma,
            },
        })
    }
}

/// Extracts the graph and writes `graph.json` and `graph_emb.bin` into `out`.
/// `labels` restricts node labels to a subset of the object vocabulary.
pub fn graph_run(field: &RadianceField, ds: &Dataset, cfg: &GraphConfig, labels: Option<&[String]>, out: &Path) -> Result<SceneGraph> {
    let points = sample_points(field, &cfg.source(ds)?, &cfg.sampling)?;
    let mut vocab = GraphVocab::new(&ds.object_vocab, &ds.relation_vocab)?;
    if let Some(labels) = labels {
        for l in labels {
            ds.object_vocab.embedding(l)?;
        }
        vocab.objects = table_labels(&ds.object_vocab, &[]).into_iter().filter(|(l, _)| labels.contains(l)).collect();
    }
    let graph = extract_graph(field, &points, &vocab, &cfg.graph)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    graph.export(out)?;
    Ok(graph)
}

/// One command-line query: object relevancy without a click, relationship relevancy with one.
pub struct QueryRequest<'a> {
    pub text: &'a str,
    pub frame: Option<u32>,
    pub click: Option<[usize; 2]>,
    pub direction: Direction,
}

pub fn query_run(field: &RadianceField, ds: &Dataset, req: &QueryRequest<'_>, opts: &QueryOptions) -> Result<QueryResult> {
    let id = req.frame.unwrap_or_else(|| ds.cameras.first().map_or(0, |c| c.id));
    let cam = ds
        .cameras
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown frame {id}; dataset has {} cameras", ds.cameras.len())))?;
    match req.click {
        None => query_object(field, &QueryVector::from_text(&ds.object_vocab, req.text)?, Domain::Frame(cam), opts),
        Some(px) => {
            let q = QueryVector::from_text(&ds.relation_vocab, req.text)?;
            let canon = RelevancyConfig::canonical(&ds.relation_vocab)?;
            let click = click_to_query(field, cam, px, opts)?;
            query_relation(field, &click, &q, &canon, Domain::Frame(cam), req.direction, opts)
        }
    }
}

pub fn load_run(ckpt: &Path, data: &Path) -> Result<(RadianceField, Dataset)> {
    Ok((load_checkpoint(ckpt)?, Dataset::load(data)?))
}
