//! Binary checkpoint container: versioned header followed by little-endian
//! f32 parameter blocks, with a JSON sidecar listing offsets and checksums.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Aabb, GridConfig, HeadDims, RadianceField, BLOCK_NAMES};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFLD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub offset: u64,
    pub len: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub header_bytes: u64,
    pub header_sha256: String,
    pub blocks: Vec<BlockEntry>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_header(config: &GridConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(128);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for r in config.resolution.iter().chain(&config.feature_resolution) {
        out.extend_from_slice(&(*r as u32).to_le_bytes());
    }
    for v in config.bounds.min.iter().chain(&config.bounds.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let d = config.dims;
    for v in [d.semantic, d.instance, d.relation, d.relation_input, d.hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(BLOCK_NAMES.len() as u32).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::malformed(self.path, "truncated header"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes `field` to `path` and its manifest to `path.json`.
pub fn save_checkpoint(field: &RadianceField, path: &Path) -> Result<CheckpointManifest> {
    let header = encode_header(&field.config);
    let mut bytes = header.clone();
    let mut blocks = Vec::new();
    for (name, values) in field.blocks() {
        let offset = bytes.len() as u64;
        let start = bytes.len();
        for v in values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        blocks.push(BlockEntry {
            name: name.to_string(),
            offset,
            len: values.len() as u64,
            sha256: sha_hex(&bytes[start..]),
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        header_bytes: header.len() as u64,
        header_sha256: sha_hex(&header),
        blocks,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<RadianceField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let manifest: CheckpointManifest =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;

    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::malformed(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION || manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut res = [0usize; 6];
    for r_ in res.iter_mut() {
        *r_ = r.u32()? as usize;
    }
    let mut b = [0.0; 6];
    for v in b.iter_mut() {
        *v = r.f64()?;
    }
    let mut d = [0usize; 5];
    for v in d.iter_mut() {
        *v = r.u32()? as usize;
    }
    let nblocks = r.u32()? as usize;
    if nblocks != BLOCK_NAMES.len() {
        return Err(Error::malformed(path, format!("expected {} blocks, found {nblocks}", BLOCK_NAMES.len())));
    }
    let header_len = r.pos;
    let header_sha = sha_hex(&bytes[..header_len]);
    if header_sha != manifest.header_sha256 {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected: manifest.header_sha256.clone(),
            found: header_sha,
        });
    }
    let config = GridConfig {
        resolution: [res[0], res[1], res[2]],
        feature_resolution: [res[3], res[4], res[5]],
        bounds: Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]),
        dims: HeadDims {
            semantic: d[0],
            instance: d[1],
            relation: d[2],
            relation_input: d[3],
            hidden: d[4],
        },
    };
    let mut field = RadianceField::zeros(config)?;
    let mut pos = header_len;
    for (block, entry) in field.blocks_mut().into_iter().zip(&manifest.blocks) {
        let n = block.values.len();
        if entry.name != block.name || entry.len as usize != n || entry.offset as usize != pos {
            return Err(Error::malformed(
                &side,
                format!("block '{}' does not match the field layout", entry.name),
            ));
        }
        let end = pos + 4 * n;
        if end > bytes.len() {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: entry.sha256.clone(),
                found: "truncated".into(),
            });
        }
        let found = sha_hex(&bytes[pos..end]);
        if found != entry.sha256 {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: entry.sha256.clone(),
                found,
            });
        }
        for (v, chunk) in block.values.iter_mut().zip(bytes[pos..end].chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::malformed(path, "trailing bytes after last block"));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldInit;

    fn cfg() -> GridConfig {
        GridConfig {
            resolution: [3, 4, 3],
            feature_resolution: [2, 3, 2],
            bounds: Aabb::new([-1.0, -1.0, 0.0], [1.0, 1.0, 1.0]),
            dims: HeadDims {
                semantic: 4,
                instance: 2,
                relation: 3,
                relation_input: 2,
                hidden: 5,
            },
        }
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.rfld");
        let field = RadianceField::new(cfg(), FieldInit::default(), 1).unwrap();
        save_checkpoint(&field, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, field.config);
        for ((_, a), (_, b)) in field.blocks().iter().zip(loaded.blocks().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RFLD");
    }

    #[test]
    fn corrupted_block_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.rfld");
        let field = RadianceField::new(cfg(), FieldInit::default(), 1).unwrap();
        save_checkpoint(&field, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x55;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checksum { .. })));
        fs::write(&path, &bytes[..n - 8]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checksum { .. })));
    }
}
