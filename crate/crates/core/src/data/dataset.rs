//! Dataset generation and the on-disk layout shared by synthetic and
//! externally produced supervision.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotate::{annotate_relations, GroundTruthGraph};
use super::embedding::EmbeddingTable;
use super::features::semantic_feature_map;
use super::raytrace::render_view;
use super::scene::SceneSpec;
use crate::error::{Error, Result};
use crate::io::{self, PlaneHeader};
use crate::math::Vec3;
use crate::render::{Camera, CameraRecord};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Cameras evenly spaced in azimuth around a target, cycling through heights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub heights: Vec<f64>,
    pub target: [f64; 3],
    pub fov_x_deg: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub azimuth_offset: f64,
}

impl CameraRing {
    /// Ring framing the two-object demo scene.
    pub fn demo() -> Self {
        Self {
            count: 20,
            radius: 2.3,
            heights: vec![0.9, 1.6, 0.45],
            target: [0.0, 0.0, 0.4],
            fov_x_deg: 28.0,
            width: 64,
            height: 64,
            azimuth_offset: 0.0,
        }
    }

    /// Ring framing random scenes spread over the whole tabletop.
    pub fn wide() -> Self {
        Self {
            count: 24,
            radius: 2.8,
            heights: vec![1.4, 2.2, 0.8],
            target: [0.0, 0.0, 0.2],
            fov_x_deg: 50.0,
            width: 64,
            height: 64,
            azimuth_offset: 0.0,
        }
    }

    pub fn cameras(&self, first_id: u32) -> Vec<Camera> {
        let target = Vec3::from(self.target);
        (0..self.count)
            .map(|k| {
                let a = self.azimuth_offset + std::f64::consts::TAU * k as f64 / self.count as f64;
                let h = self.heights[k % self.heights.len()];
                let eye = target + Vec3::new(self.radius * a.cos(), self.radius * a.sin(), h);
                Camera::look_at(first_id + k as u32, eye, target, self.width, self.height, self.fov_x_deg)
            })
            .collect()
    }

    /// `n` cameras half a step off the training azimuths at the mean height.
    pub fn heldout(&self, n: usize) -> Vec<Camera> {
        let mean_h = self.heights.iter().sum::<f64>() / self.heights.len() as f64;
        let ring = CameraRing {
            count: n,
            heights: vec![mean_h],
            azimuth_offset: self.azimuth_offset + std::f64::consts::PI / self.count as f64,
            ..self.clone()
        };
        ring.cameras(10_000)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub cameras: CameraRing,
    pub semantic_dim: usize,
    pub relation_dim: usize,
    /// Std of the Gaussian perturbation of semantic targets.
    pub semantic_noise: f64,
    pub vocab_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            cameras: CameraRing::demo(),
            semantic_dim: 16,
            relation_dim: 16,
            semantic_noise: 0.0,
            vocab_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPair {
    pub subject_id: u16,
    pub object_id: u16,
    pub phrases: Vec<String>,
}

/// Contents of `relations/<id>.json`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRelations {
    pub image_id: u32,
    pub pairs: Vec<RelationPair>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageData {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    /// Interleaved 8-bit RGB.
    pub rgb: Vec<u8>,
    /// Instance id per pixel, 0 = unannotated.
    pub segmap: Vec<u16>,
    /// Hit distance per pixel, 0 where nothing is hit.
    pub depth: Option<Vec<f32>>,
    /// Per-pixel semantic targets, `semantic_dim` channels.
    pub semfeat: Option<Vec<f32>>,
    pub relations: ImageRelations,
}

impl ImageData {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn rgb_at(&self, pixel: usize) -> [f64; 3] {
        let p = &self.rgb[3 * pixel..3 * pixel + 3];
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }

    pub fn visible_ids(&self) -> BTreeSet<u16> {
        self.segmap.iter().copied().filter(|&i| i != 0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: Option<DatasetConfig>,
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageData>,
    pub relation_vocab: EmbeddingTable,
    pub object_vocab: EmbeddingTable,
    pub graph: GroundTruthGraph,
    pub scene: Option<SceneSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    #[serde(default)]
    pub sha256: Option<String>,
    #[serde(default)]
    pub bytes: Option<u64>,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub semantic_dim: usize,
    pub relation_dim: usize,
    #[serde(default)]
    pub config: Option<DatasetConfig>,
    #[serde(default)]
    pub files: Vec<ManifestFile>,
}

fn group_relations(graph: &GroundTruthGraph, image_id: u32, visible: &BTreeSet<u16>) -> ImageRelations {
    let mut grouped: BTreeMap<(u16, u16), Vec<String>> = BTreeMap::new();
    for e in &graph.edges {
        if visible.contains(&e.subject) && visible.contains(&e.object) {
            grouped.entry((e.subject, e.object)).or_default().push(e.predicate.clone());
        }
    }
    ImageRelations {
        image_id,
        pairs: grouped
            .into_iter()
            .map(|((s, o), phrases)| RelationPair {
                subject_id: s,
                object_id: o,
                phrases,
            })
            .collect(),
    }
}

impl Dataset {
    /// Renders, annotates and distills a scene into a dataset.
    pub fn generate(scene: &SceneSpec, config: &DatasetConfig, seed: u64) -> Result<Self> {
        scene.validate()?;
        let graph = annotate_relations(scene);
        let object_vocab = EmbeddingTable::objects(config.semantic_dim, config.vocab_seed)?;
        let relation_vocab = EmbeddingTable::relations(config.relation_dim, config.vocab_seed.wrapping_add(1))?;
        let classes: BTreeMap<u16, String> = graph.nodes.iter().map(|n| (n.id, n.class.clone())).collect();
        let cameras = config.cameras.cameras(0);
        let mut images = Vec::with_capacity(cameras.len());
        for cam in &cameras {
            let view = render_view(scene, cam);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(cam.id as u64 + 1)));
            let semfeat = semantic_feature_map(&view.instance, &classes, &object_vocab, config.semantic_noise, &mut rng)?;
            let segmap = view.instance.clone();
            let visible = segmap.iter().copied().filter(|&i| i != 0).collect();
            images.push(ImageData {
                id: cam.id,
                width: cam.width,
                height: cam.height,
                rgb: view.rgb.iter().flat_map(|c| c.map(io::to_u8)).collect(),
                segmap,
                depth: Some(view.depth),
                semfeat: Some(semfeat),
                relations: group_relations(&graph, cam.id, &visible),
            });
        }
        Ok(Self {
            config: Some(config.clone()),
            cameras,
            images,
            relation_vocab,
            object_vocab,
            graph,
            scene: Some(scene.clone()),
        })
    }

    pub fn semantic_dim(&self) -> usize {
        self.object_vocab.dim
    }

    pub fn relation_dim(&self) -> usize {
        self.relation_vocab.dim
    }

    pub fn camera(&self, id: u32) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn class_of(&self, id: u16) -> Option<&str> {
        self.graph.class_of(id)
    }

    /// Held-out cameras interleaved with the training ring.
    pub fn heldout_cameras(&self, n: usize) -> Vec<Camera> {
        self.config.as_ref().map(|c| c.cameras.heldout(n)).unwrap_or_default()
    }

    /// Writes the dataset directory; returns the manifest.
    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        let mut files = Vec::new();
        let mut put = |rel: String, bytes: Vec<u8>| -> Result<()> {
            io::write_file(&dir.join(&rel), &bytes)?;
            files.push(ManifestFile {
                path: rel,
                sha256: Some(io::sha256_hex(&bytes)),
                bytes: Some(bytes.len() as u64),
            });
            Ok(())
        };
        let records: Vec<CameraRecord> = self.cameras.iter().map(Camera::to_record).collect();
        put("cameras.json".into(), json_bytes(&records)?)?;
        for img in &self.images {
            let id = img.id;
            put(format!("rgb/{id}.png"), io::encode_rgb8(img.width, img.height, &img.rgb)?)?;
            put(format!("segmap/{id}.png"), io::encode_gray16(img.width, img.height, &img.segmap)?)?;
            if let Some(d) = &img.depth {
                let h = PlaneHeader {
                    width: img.width,
                    height: img.height,
                    channels: 1,
                    name: "depth".into(),
                };
                put(format!("depth/{id}.bin"), io::encode_plane(&h, d)?)?;
            }
            if let Some(s) = &img.semfeat {
                let h = PlaneHeader {
                    width: img.width,
                    height: img.height,
                    channels: self.semantic_dim(),
                    name: "semantic".into(),
                };
                put(format!("semfeat/{id}.bin"), io::encode_plane(&h, s)?)?;
            }
            put(format!("relations/{id}.json"), json_bytes(&img.relations)?)?;
        }
        put("vocab.bin".into(), self.relation_vocab.to_bytes())?;
        put("vocab_objects.bin".into(), self.object_vocab.to_bytes())?;
        put("graph_gt.json".into(), json_bytes(&self.graph)?)?;
        if let Some(scene) = &self.scene {
            put("scene.json".into(), json_bytes(scene)?)?;
        }
        let manifest = DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            semantic_dim: self.semantic_dim(),
            relation_dim: self.relation_dim(),
            config: self.config.clone(),
            files,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }

    /// Loads a dataset directory, verifying every listed checksum.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: DatasetManifest = io::read_json(&manifest_path)?;
        if manifest.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: manifest_path,
                found: manifest.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let listed: BTreeMap<&str, &ManifestFile> = manifest.files.iter().map(|f| (f.path.as_str(), f)).collect();
        for f in &manifest.files {
            let path = dir.join(&f.path);
            let bytes = io::read_file(&path)?;
            if let Some(expected) = &f.sha256 {
                let found = io::sha256_hex(&bytes);
                if &found != expected {
                    return Err(Error::Checksum {
                        path,
                        expected: expected.clone(),
                        found,
                    });
                }
            }
        }
        let read = |rel: &str| -> Result<(PathBuf, Vec<u8>)> {
            let p = dir.join(rel);
            let b = io::read_file(&p)?;
            Ok((p, b))
        };
        let optional = |rel: &str| -> Result<Option<(PathBuf, Vec<u8>)>> {
            let p = dir.join(rel);
            if listed.contains_key(rel) || p.exists() {
                read(rel).map(Some)
            } else {
                Ok(None)
            }
        };
        let records: Vec<CameraRecord> = io::read_json(&dir.join("cameras.json"))?;
        let cameras = records.iter().map(Camera::from_record).collect::<Result<Vec<_>>>()?;
        let relation_vocab = EmbeddingTable::read(&dir.join("vocab.bin"))?;
        let object_vocab = EmbeddingTable::read(&dir.join("vocab_objects.bin"))?;
        if relation_vocab.dim != manifest.relation_dim || object_vocab.dim != manifest.semantic_dim {
            return Err(Error::malformed(&manifest_path, "vocabulary dimensions disagree with the manifest"));
        }
        let graph: GroundTruthGraph = io::read_json(&dir.join("graph_gt.json"))?;
        let scene = match optional("scene.json")? {
            Some((p, b)) => Some(serde_json::from_slice(&b).map_err(|e| Error::malformed(&p, e.to_string()))?),
            None => None,
        };
        let mut images = Vec::with_capacity(cameras.len());
        for cam in &cameras {
            let id = cam.id;
            let (p, b) = read(&format!("rgb/{id}.png"))?;
            let (w, h, rgb) = io::decode_rgb8(&b, &p)?;
            if (w, h) != (cam.width, cam.height) {
                return Err(Error::malformed(&p, format!("{w}x{h} image for a {}x{} camera", cam.width, cam.height)));
            }
            let (p, b) = read(&format!("segmap/{id}.png"))?;
            let (sw, sh, segmap) = io::decode_gray16(&b, &p)?;
            if (sw, sh) != (w, h) {
                return Err(Error::malformed(&p, "segmentation map size differs from the image"));
            }
            for &sid in &segmap {
                if sid != 0 && graph.class_of(sid).is_none() {
                    return Err(Error::malformed(&p, format!("instance id {sid} missing from graph_gt.json")));
                }
            }
            let plane = |rel: String, channels: usize| -> Result<Option<Vec<f32>>> {
                match optional(&rel)? {
                    None => Ok(None),
                    Some((p, b)) => {
                        let (hd, data) = io::decode_plane(&b, &p)?;
                        if (hd.width, hd.height, hd.channels) != (w, h, channels) {
                            return Err(Error::malformed(&p, "plane shape differs from the image"));
                        }
                        Ok(Some(data))
                    }
                }
            };
            let depth = plane(format!("depth/{id}.bin"), 1)?;
            let semfeat = plane(format!("semfeat/{id}.bin"), manifest.semantic_dim)?;
            let (p, b) = read(&format!("relations/{id}.json"))?;
            let relations: ImageRelations = serde_json::from_slice(&b).map_err(|e| Error::malformed(&p, e.to_string()))?;
            let visible: BTreeSet<u16> = segmap.iter().copied().collect();
            for pair in &relations.pairs {
                if !visible.contains(&pair.subject_id) || !visible.contains(&pair.object_id) || pair.subject_id == 0 || pair.object_id == 0 {
                    return Err(Error::malformed(&p, format!("pair ({}, {}) references ids absent from the segmentation map", pair.subject_id, pair.object_id)));
                }
                for phrase in &pair.phrases {
                    relation_vocab.embedding(phrase)?;
                }
            }
            images.push(ImageData {
                id,
                width: w,
                height: h,
                rgb,
                segmap,
                depth,
                semfeat,
                relations,
            });
        }
        Ok(Self {
            config: manifest.config,
            cameras,
            images,
            relation_vocab,
            object_vocab,
            graph,
            scene,
        })
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(value)?;
    b.push(b'\n');
    Ok(b)
}
