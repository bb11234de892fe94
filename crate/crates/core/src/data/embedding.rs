//! Mock text encoder: unit-norm phrase embeddings realizing a declared
//! pairwise-cosine structure, plus the `vocab.bin` file format.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{cosine, normalized, to_f64};

pub const CANONICAL_PHRASES: [&str; 3] = ["and", "next to", "none"];
pub const NONE_PHRASE: &str = "none";
pub const BACKGROUND_PHRASE: &str = "background";

/// Object classes known to the synthetic generator.
pub const OBJECT_VOCABULARY: [&str; 5] = [BACKGROUND_PHRASE, "sphere", "ball", "box", "crate"];

/// Canonical phrases followed by the closed synthetic predicate set.
pub const RELATION_VOCABULARY: [&str; 15] = [
    "and",
    "next to",
    "none",
    "standing on",
    "supporting",
    "above",
    "below",
    "same as",
    "inside",
    "containing",
    "part of",
    "lying on",
    "on top of",
    "hanging on",
    "attached to",
];

pub const OBJECT_SIMILARITIES: [(&str, &str, f64); 2] = [("sphere", "ball", 0.5), ("box", "crate", 0.5)];

pub const RELATION_SIMILARITIES: [(&str, &str, f64); 9] = [
    ("lying on", "on top of", 0.9),
    ("standing on", "lying on", 0.5),
    ("standing on", "on top of", 0.5),
    ("above", "on top of", 0.3),
    ("above", "below", -0.5),
    ("standing on", "supporting", -0.3),
    ("inside", "containing", -0.3),
    ("hanging on", "attached to", 0.6),
    ("and", "next to", 0.2),
];

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub phrases: Vec<String>,
    /// Row-major `phrases.len() × dim`.
    pub data: Vec<f32>,
    /// Declared (clipped) Gram matrix the embeddings realize, row-major.
    pub declared: Vec<f64>,
}

fn unknown(phrase: &str, phrases: &[String]) -> Error {
    Error::UnknownPhrase {
        phrase: phrase.to_string(),
        vocabulary: phrases.to_vec(),
    }
}

impl EmbeddingTable {
    /// Factorizes the declared Gram matrix through its eigendecomposition,
    /// pads the rows to `dim` and applies a seeded random rotation.
    /// Negative eigenvalues are clipped at zero unless `exact` is set, in
    /// which case they are an error.
    pub fn build(vocabulary: &[&str], similarities: &[(&str, &str, f64)], dim: usize, seed: u64, exact: bool) -> Result<Self> {
        let n = vocabulary.len();
        if n == 0 || dim == 0 {
            return Err(Error::InvalidConfig("empty vocabulary or zero dimension".into()));
        }
        let phrases: Vec<String> = vocabulary.iter().map(|p| p.to_lowercase()).collect();
        let mut gram = DMatrix::<f64>::identity(n, n);
        for (a, b, c) in similarities {
            let ia = phrases.iter().position(|p| p == a).ok_or_else(|| unknown(a, &phrases))?;
            let ib = phrases.iter().position(|p| p == b).ok_or_else(|| unknown(b, &phrases))?;
            gram[(ia, ib)] = *c;
            gram[(ib, ia)] = *c;
        }
        let eig = SymmetricEigen::new(gram.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig < -1e-10 && exact {
            return Err(Error::NotPositiveSemiDefinite { min_eigenvalue: min_eig });
        }
        let rank_needed = eig.eigenvalues.iter().filter(|&&l| l > 1e-12).count();
        if rank_needed > dim && exact {
            return Err(Error::InvalidConfig(format!(
                "{rank_needed} independent directions needed but dimension is {dim}"
            )));
        }
        // L = V sqrt(max(Λ, 0)), keeping the largest eigen-directions.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let keep = n.min(dim);
        let mut rows = DMatrix::<f64>::zeros(n, dim);
        for (col, &k) in order.iter().take(keep).enumerate() {
            let s = eig.eigenvalues[k].max(0.0).sqrt();
            for i in 0..n {
                rows[(i, col)] = eig.eigenvectors[(i, k)] * s;
            }
        }
        for i in 0..n {
            let norm = rows.row(i).norm();
            if norm > 0.0 {
                let r = rows.row(i) / norm;
                rows.set_row(i, &r);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let rotated = rows * q.transpose();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            let row: Vec<f64> = rotated.row(i).iter().copied().collect();
            let unit = normalized(&row).unwrap_or_else(|| vec![0.0; dim]);
            data.extend(unit.iter().map(|&x| x as f32));
        }
        let declared = {
            let mut clipped = DMatrix::<f64>::zeros(n, n);
            for k in 0..n {
                let v = eig.eigenvectors.column(k);
                clipped += v * v.transpose() * eig.eigenvalues[k].max(0.0);
            }
            let d: Vec<f64> = (0..n).map(|i| clipped[(i, i)].max(1e-300).sqrt()).collect();
            let mut out = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    out.push(clipped[(i, j)] / (d[i] * d[j]));
                }
            }
            out
        };
        Ok(Self {
            dim,
            phrases,
            data,
            declared,
        })
    }

    pub fn objects(dim: usize, seed: u64) -> Result<Self> {
        Self::build(&OBJECT_VOCABULARY, &OBJECT_SIMILARITIES, dim, seed, true)
    }

    pub fn relations(dim: usize, seed: u64) -> Result<Self> {
        Self::build(&RELATION_VOCABULARY, &RELATION_SIMILARITIES, dim, seed, true)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn index_of(&self, phrase: &str) -> Option<usize> {
        let p = phrase.trim().to_lowercase();
        self.phrases.iter().position(|x| *x == p)
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn row_f64(&self, index: usize) -> Vec<f64> {
        to_f64(self.row(index))
    }

    /// Embedding of `phrase`, or an error listing the vocabulary.
    pub fn embedding(&self, phrase: &str) -> Result<Vec<f64>> {
        self.index_of(phrase)
            .map(|i| self.row_f64(i))
            .ok_or_else(|| unknown(phrase, &self.phrases))
    }

    pub fn embedding_f32(&self, phrase: &str) -> Result<&[f32]> {
        self.index_of(phrase)
            .map(|i| self.row(i))
            .ok_or_else(|| unknown(phrase, &self.phrases))
    }

    pub fn realized_cosine(&self, a: usize, b: usize) -> f64 {
        cosine(&self.row_f64(a), &self.row_f64(b))
    }

    pub fn declared_cosine(&self, a: usize, b: usize) -> f64 {
        self.declared[a * self.len() + b]
    }

    /// Phrase with the highest cosine to `v`.
    pub fn nearest(&self, v: &[f64]) -> Option<(&str, f64)> {
        (0..self.len())
            .map(|i| (self.phrases[i].as_str(), cosine(v, &self.row_f64(i))))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    }

    /// `u32 count, u32 dim`, then each phrase as `u32 byte length + UTF-8`,
    /// then `count × dim` little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for p in &self.phrases {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            out.extend_from_slice(p.as_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(Error::malformed(path, "truncated vocabulary"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut phrases = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let s = std::str::from_utf8(take(len)?).map_err(|e| Error::malformed(path, e.to_string()))?;
            phrases.push(s.to_string());
        }
        let raw = take(4 * count * dim)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if take(1).is_ok() {
            return Err(Error::malformed(path, "trailing bytes in vocabulary"));
        }
        let mut t = Self {
            dim,
            phrases,
            data,
            declared: Vec::new(),
        };
        let n = t.len();
        t.declared = (0..n * n).map(|k| t.realized_cosine(k / n, k % n)).collect();
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
