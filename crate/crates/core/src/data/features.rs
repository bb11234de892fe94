//! Per-pixel semantic supervision: class embeddings painted through the
//! instance maps, optionally perturbed.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::embedding::{EmbeddingTable, BACKGROUND_PHRASE};
use crate::error::{Error, Result};

/// Row-major `instance.len() × dim` feature map. Every pixel gets the
/// embedding of its instance's class (the background phrase for id 0),
/// with Gaussian noise of std `noise` added and the result re-normalized.
pub fn semantic_feature_map<R: Rng + ?Sized>(
    instance: &[u16],
    classes: &BTreeMap<u16, String>,
    table: &EmbeddingTable,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let dim = table.dim;
    let mut rows: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    rows.insert(0, table.embedding(BACKGROUND_PHRASE)?);
    for &id in instance {
        if rows.contains_key(&id) {
            continue;
        }
        let class = classes
            .get(&id)
            .ok_or_else(|| Error::InvalidConfig(format!("instance id {id} has no class")))?;
        rows.insert(id, table.embedding(class)?);
    }
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("finite noise"));
    let mut out = Vec::with_capacity(instance.len() * dim);
    let mut buf = vec![0.0; dim];
    for id in instance {
        let e = &rows[id];
        match &normal {
            None => out.extend(e.iter().map(|&x| x as f32)),
            Some(n) => {
                for (b, &x) in buf.iter_mut().zip(e) {
                    *b = x + n.sample(rng);
                }
                let norm = buf.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                out.extend(buf.iter().map(|&x| (x / norm) as f32));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cosine, to_f64};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (EmbeddingTable, BTreeMap<u16, String>) {
        let t = EmbeddingTable::objects(16, 4).unwrap();
        let classes = BTreeMap::from([(1, "box".to_string()), (2, "sphere".to_string())]);
        (t, classes)
    }

    #[test]
    fn noise_free_pixels_equal_class_embedding() {
        let (t, classes) = setup();
        let ids = [0u16, 2, 2, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let map = semantic_feature_map(&ids, &classes, &t, 0.0, &mut rng).unwrap();
        let sphere = t.embedding("sphere").unwrap();
        let bg = t.embedding("background").unwrap();
        assert!((cosine(&to_f64(&map[16..32]), &sphere) - 1.0).abs() < 1e-6);
        assert!((cosine(&to_f64(&map[0..16]), &bg) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn perturbed_pixels_stay_close() {
        let (t, classes) = setup();
        let ids = vec![2u16; 10_000];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = semantic_feature_map(&ids, &classes, &t, 0.1, &mut rng).unwrap();
        let sphere = t.embedding("sphere").unwrap();
        let mean: f64 = map.chunks(16).map(|px| cosine(&to_f64(px), &sphere)).sum::<f64>() / 10_000.0;
        assert!(mean > 0.9, "mean cosine {mean}");
    }

    #[test]
    fn unknown_id_is_an_error() {
        let (t, classes) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(semantic_feature_map(&[7], &classes, &t, 0.0, &mut rng).is_err());
    }
}
