//! Relationship supervision: the per-image relation store with its two-step
//! lookup, the pair-pixel sampler, and relation rendering along rays.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::embedding::{CANONICAL_PHRASES, NONE_PHRASE};
use crate::data::{Dataset, EmbeddingTable, ImageData};
use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::math::{normalized_mean, to_f64, Vec3};
use crate::render::{march, Camera, Ray, RayMarch};

/// Resampling attempts per sampler slot before the slot is dropped.
pub const MAX_PAIR_ATTEMPTS: usize = 32;

/// Target for annotated pairs that carry no relation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnrelatedPolicy {
    #[default]
    NonePhrase,
    Skip,
}

/// One image of the store: its segmentation map and relation table.
#[derive(Clone, Debug, PartialEq)]
pub struct StoreImage {
    pub image_id: u32,
    pub width: usize,
    pub height: usize,
    pub segmap: Vec<u16>,
    /// `(subject id, object id)` → pool row.
    pub table: BTreeMap<(u16, u16), u32>,
    annotated: Vec<u32>,
}

impl StoreImage {
    pub fn id_at(&self, pixel: [usize; 2]) -> u16 {
        self.segmap[pixel[1] * self.width + pixel[0]]
    }

    pub fn annotated_pixels(&self) -> usize {
        self.annotated.len()
    }
}

/// Segmentation maps plus keyed tables into a shared, deduplicated pool of
/// unit-norm relation embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationStore {
    pub dim: usize,
    pub images: Vec<StoreImage>,
    pool: Vec<f32>,
    /// Source phrases of each pool row, for diagnostics.
    pub pool_phrases: Vec<Vec<String>>,
    none_row: Option<u32>,
    pub unrelated: UnrelatedPolicy,
}

/// Phrases that define a pair's target: canonical phrases are dropped when a
/// specific predicate is also present.
pub fn target_phrases(phrases: &[String]) -> Vec<&str> {
    let specific: Vec<&str> = phrases
        .iter()
        .map(String::as_str)
        .filter(|p| !CANONICAL_PHRASES.contains(p))
        .collect();
    if specific.is_empty() {
        phrases.iter().map(String::as_str).collect()
    } else {
        specific
    }
}

/// Byte size of the dense per-pixel-pair relation tensor for `n` images of
/// `w × h` pixels with `m` masks each and `d`-dimensional features.
pub fn dense_relation_bytes(n: usize, m: usize, w: usize, h: usize, d: usize, bytes_per_value: usize) -> u128 {
    n as u128 * m as u128 * m.saturating_sub(1) as u128 * w as u128 * h as u128 * d as u128 * bytes_per_value as u128
}

impl RelationStore {
    pub fn build(images: &[ImageData], vocab: &EmbeddingTable, unrelated: UnrelatedPolicy) -> Result<Self> {
        let dim = vocab.dim;
        let mut pool: Vec<f32> = Vec::new();
        let mut pool_phrases: Vec<Vec<String>> = Vec::new();
        let mut rows: BTreeMap<Vec<String>, u32> = BTreeMap::new();
        let mut intern = |phrases: Vec<String>, pool: &mut Vec<f32>, pool_phrases: &mut Vec<Vec<String>>| -> Result<u32> {
            if let Some(&r) = rows.get(&phrases) {
                return Ok(r);
            }
            let row: Vec<f32> = if phrases.len() == 1 {
                vocab.embedding_f32(&phrases[0])?.to_vec()
            } else {
                let embs = phrases.iter().map(|p| vocab.embedding(p)).collect::<Result<Vec<_>>>()?;
                let mean = normalized_mean(embs.iter().map(|v| v.as_slice()), dim)
                    .ok_or_else(|| Error::InvalidConfig(format!("phrases {phrases:?} average to zero")))?;
                mean.iter().map(|&x| x as f32).collect()
            };
            let r = pool_phrases.len() as u32;
            pool.extend_from_slice(&row);
            pool_phrases.push(phrases.clone());
            rows.insert(phrases, r);
            Ok(r)
        };
        let none_row = match vocab.index_of(NONE_PHRASE) {
            Some(_) => Some(intern(vec![NONE_PHRASE.to_string()], &mut pool, &mut pool_phrases)?),
            None => None,
        };
        let mut out = Vec::with_capacity(images.len());
        for img in images {
            let mut table = BTreeMap::new();
            for pair in &img.relations.pairs {
                if pair.subject_id == pair.object_id || pair.phrases.is_empty() {
                    continue;
                }
                let mut phrases: Vec<String> = target_phrases(&pair.phrases).into_iter().map(str::to_string).collect();
                phrases.sort();
                phrases.dedup();
                let r = intern(phrases, &mut pool, &mut pool_phrases)?;
                table.insert((pair.subject_id, pair.object_id), r);
            }
            let annotated = (0..img.segmap.len() as u32).filter(|&i| img.segmap[i as usize] != 0).collect();
            out.push(StoreImage {
                image_id: img.id,
                width: img.width,
                height: img.height,
                segmap: img.segmap.clone(),
                table,
                annotated,
            });
        }
        if unrelated == UnrelatedPolicy::NonePhrase && none_row.is_none() {
            return Err(Error::UnknownPhrase {
                phrase: NONE_PHRASE.into(),
                vocabulary: vocab.phrases.clone(),
            });
        }
        Ok(Self {
            dim,
            images: out,
            pool,
            pool_phrases,
            none_row,
            unrelated,
        })
    }

    pub fn from_dataset(ds: &Dataset, unrelated: UnrelatedPolicy) -> Result<Self> {
        Self::build(&ds.images, &ds.relation_vocab, unrelated)
    }

    pub fn pool_len(&self) -> usize {
        self.pool_phrases.len()
    }

    pub fn pool_row(&self, row: u32) -> &[f32] {
        let r = row as usize;
        &self.pool[r * self.dim..(r + 1) * self.dim]
    }

    /// Second lookup step: target for `(id at query pixel, id at ray pixel)`.
    /// Self-pairs and unannotated pixels have no target.
    pub fn lookup_ids(&self, image: usize, query_id: u16, ray_id: u16) -> Option<&[f32]> {
        if query_id == 0 || ray_id == 0 || query_id == ray_id {
            return None;
        }
        match self.images[image].table.get(&(query_id, ray_id)) {
            Some(&r) => Some(self.pool_row(r)),
            None => match self.unrelated {
                UnrelatedPolicy::NonePhrase => self.none_row.map(|r| self.pool_row(r)),
                UnrelatedPolicy::Skip => None,
            },
        }
    }

    /// Two-step lookup: segmentation map, then relation table.
    pub fn lookup_target(&self, pair: &PixelPair) -> Option<&[f32]> {
        let img = &self.images[pair.image];
        self.lookup_ids(pair.image, img.id_at(pair.query), img.id_at(pair.ray))
    }

    /// Bytes held: 16-bit maps, table entries (two ids and a row index) and
    /// the embedding pool.
    pub fn memory_bytes(&self) -> usize {
        let maps: usize = self.images.iter().map(|i| 2 * i.segmap.len()).sum();
        let tables: usize = self.images.iter().map(|i| 8 * i.table.len()).sum();
        maps + tables + 4 * self.pool.len()
    }

    pub fn annotated_images(&self) -> Vec<usize> {
        (0..self.images.len()).filter(|&i| !self.images[i].annotated.is_empty()).collect()
    }

    /// Draws `batch` pixel pairs. Each slot picks an image uniformly, then
    /// both pixels uniformly; slots whose pixels are unannotated are redrawn
    /// up to [`MAX_PAIR_ATTEMPTS`] times and then dropped.
    pub fn sample_pairs<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<PixelPair>> {
        let candidates = self.annotated_images();
        if candidates.is_empty() {
            return Err(Error::NoAnnotatedPixels);
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let image = candidates[rng.random_range(0..candidates.len())];
            let img = &self.images[image];
            let n = img.width * img.height;
            for _ in 0..MAX_PAIR_ATTEMPTS {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let (ia, ib) = (img.segmap[a], img.segmap[b]);
                if ia != 0 && ib != 0 {
                    out.push(PixelPair {
                        image,
                        ray: [a % img.width, a / img.width],
                        query: [b % img.width, b / img.width],
                        ray_id: ia,
                        query_id: ib,
                    });
                    break;
                }
            }
        }
        Ok(out)
    }
}

/// Two pixels of one image: the ray pixel is rendered, the query pixel
/// resolves to the query location.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelPair {
    /// Index into the store's images.
    pub image: usize,
    pub ray: [usize; 2],
    pub query: [usize; 2],
    pub ray_id: u16,
    pub query_id: u16,
}

/// `Σ_k w_k · relation_forward(x_k, z)` over a density pass.
pub fn render_relation(field: &RadianceField, m: &RayMarch, z: &Vec3) -> Result<Vec<f64>> {
    render_relation_cutoff(field, m, z, 0.0)
}

/// As [`render_relation`], skipping samples whose weight is below `cutoff`.
pub fn render_relation_cutoff(field: &RadianceField, m: &RayMarch, z: &Vec3, cutoff: f64) -> Result<Vec<f64>> {
    let zf = field.relation_features(z)?;
    let q = field.fusion.project_query(&zf);
    let mut out = vec![0.0; field.fusion.output];
    let mut feat = vec![0.0; field.relation_input.channels];
    for k in 0..m.len() {
        let w = m.weights[k];
        if w <= cutoff || w == 0.0 {
            continue;
        }
        field.relation_input.read_into(&m.feat_cells[k], &mut feat);
        let act = field.fusion.forward_with(&feat, &q);
        for (o, v) in out.iter_mut().zip(&act.output) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// A pair turned into a rendered ray, a query location and a target.
#[derive(Clone, Debug)]
pub struct Supervision {
    pub ray: Ray,
    pub ray_pixel: [usize; 2],
    pub query_pixel: [usize; 2],
    pub z: Vec3,
    /// Density pass along the query pixel's ray that produced `z`.
    pub query_march: RayMarch,
    /// `(subject id, object id)` of the target entry.
    pub key: (u16, u16),
    pub target: Vec<f64>,
}

/// Outcome of resolving a pair.
#[derive(Clone, Debug)]
pub enum PairResolution {
    Ready(Supervision),
    NoTarget,
    NoHit,
}

/// Resolves a pair: ray from the ray pixel, `z` at the expected depth along
/// the query pixel's ray, target keyed `(query id, ray id)`. With `inverted`
/// the two pixels trade roles while the key keeps the original order, so the
/// subject sits under the rendered ray.
pub fn training_pair_to_supervision(
    field: &RadianceField,
    store: &RelationStore,
    camera: &Camera,
    pair: &PixelPair,
    inverted: bool,
    samples: usize,
    hit_threshold: f64,
) -> Result<PairResolution> {
    let Some(target) = store.lookup_target(pair) else {
        return Ok(PairResolution::NoTarget);
    };
    let (ray_px, query_px) = if inverted { (pair.query, pair.ray) } else { (pair.ray, pair.query) };
    let qm = march::<rand_chacha::ChaCha8Rng>(
        field,
        &camera.ray(query_px[0] as i64, query_px[1] as i64)?,
        camera.near,
        camera.far,
        samples,
        None,
    )?;
    let Some(z) = qm.surface_point(hit_threshold) else {
        return Ok(PairResolution::NoHit);
    };
    Ok(PairResolution::Ready(Supervision {
        ray: camera.ray(ray_px[0] as i64, ray_px[1] as i64)?,
        ray_pixel: ray_px,
        query_pixel: query_px,
        z,
        query_march: qm,
        key: (pair.query_id, pair.ray_id),
        target: to_f64(target),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageRelations, RelationPair};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(id: u32, w: usize, h: usize, seg: Vec<u16>, pairs: Vec<(u16, u16, &[&str])>) -> ImageData {
        ImageData {
            id,
            width: w,
            height: h,
            rgb: vec![0; 3 * w * h],
            segmap: seg,
            depth: None,
            semfeat: None,
            relations: ImageRelations {
                image_id: id,
                pairs: pairs
                    .into_iter()
                    .map(|(s, o, p)| RelationPair {
                        subject_id: s,
                        object_id: o,
                        phrases: p.iter().map(|x| x.to_string()).collect(),
                    })
                    .collect(),
            },
        }
    }

    fn vocab() -> EmbeddingTable {
        EmbeddingTable::relations(16, 2).unwrap()
    }

    #[test]
    fn lookups_follow_the_table() {
        let v = vocab();
        let img = image(0, 4, 1, vec![1, 1, 2, 3], vec![(2, 1, &["standing on"]), (1, 2, &["supporting", "next to"])]);
        let store = RelationStore::build(&[img], &v, UnrelatedPolicy::NonePhrase).unwrap();
        let pair = |ray: usize, query: usize| PixelPair {
            image: 0,
            ray: [ray, 0],
            query: [query, 0],
            ray_id: store.images[0].segmap[ray],
            query_id: store.images[0].segmap[query],
        };
        assert!(store.lookup_target(&pair(0, 1)).is_none());
        assert_eq!(store.lookup_target(&pair(0, 2)).unwrap(), v.embedding_f32("standing on").unwrap());
        assert_eq!(store.lookup_target(&pair(2, 0)).unwrap(), v.embedding_f32("supporting").unwrap());
        assert_eq!(store.lookup_target(&pair(3, 0)).unwrap(), v.embedding_f32("none").unwrap());
        let skip = RelationStore::build(&store_images(), &v, UnrelatedPolicy::Skip).unwrap();
        assert!(skip.lookup_ids(0, 1, 3).is_none());
    }

    fn store_images() -> Vec<ImageData> {
        vec![image(0, 4, 1, vec![1, 1, 2, 3], vec![(2, 1, &["standing on"])])]
    }

    #[test]
    fn multi_phrase_targets_are_normalized_means() {
        let v = vocab();
        let img = image(0, 2, 1, vec![1, 2], vec![(1, 2, &["above", "lying on"])]);
        let store = RelationStore::build(&[img], &v, UnrelatedPolicy::NonePhrase).unwrap();
        let t = to_f64(store.lookup_ids(0, 1, 2).unwrap());
        let expect = normalized_mean([v.embedding("above").unwrap(), v.embedding("lying on").unwrap()].iter().map(|x| x.as_slice()), 16).unwrap();
        for (a, b) in t.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6);
        }
        let n: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampler_is_deterministic_and_covers_ordered_pairs() {
        let v = vocab();
        let store = RelationStore::build(&[image(0, 4, 2, vec![0, 1, 1, 0, 2, 2, 0, 0], vec![])], &v, UnrelatedPolicy::NonePhrase).unwrap();
        let a = store.sample_pairs(64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = store.sample_pairs(64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(store.sample_pairs(0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().is_empty());
        let many = store.sample_pairs(100_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let seen: std::collections::BTreeSet<(u16, u16)> = many.iter().map(|p| (p.query_id, p.ray_id)).collect();
        assert_eq!(seen.len(), 4);
        assert!(many.iter().all(|p| p.ray_id != 0 && p.query_id != 0));
    }

    #[test]
    fn empty_store_is_an_error() {
        let v = vocab();
        let store = RelationStore::build(&[image(0, 2, 1, vec![0, 0], vec![])], &v, UnrelatedPolicy::NonePhrase).unwrap();
        assert!(matches!(store.sample_pairs(4, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::NoAnnotatedPixels)));
    }

    #[test]
    fn dense_formula() {
        assert_eq!(dense_relation_bytes(200, 10, 640, 480, 512, 2), 200 * 90 * 640 * 480 * 512 * 2);
        assert_eq!(dense_relation_bytes(1, 1, 8, 8, 4, 4), 0);
    }
}
