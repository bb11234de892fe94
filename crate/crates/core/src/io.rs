//! PNG images, float planes with a JSON header, and checksums.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(data).map_err(png_err)?;
    }
    Ok(out)
}

/// 8-bit RGB PNG from interleaved bytes.
pub fn encode_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    encode_png(width, height, png::ColorType::Rgb, png::BitDepth::Eight, rgb)
}

/// 16-bit grayscale PNG (big-endian samples, as PNG requires).
pub fn encode_gray16(width: usize, height: usize, values: &[u16]) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode_png(width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let dec = png::Decoder::new(Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::malformed(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::malformed(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::malformed(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data: buf,
    })
}

/// Returns `(width, height, interleaved RGB bytes)`.
pub fn decode_rgb8(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let d = decode_png(bytes, path)?;
    if d.color != png::ColorType::Rgb || d.depth != png::BitDepth::Eight {
        return Err(Error::malformed(path, format!("expected 8-bit RGB, found {:?} {:?}", d.color, d.depth)));
    }
    Ok((d.width, d.height, d.data))
}

pub fn decode_gray16(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let d = decode_png(bytes, path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Sixteen {
        return Err(Error::malformed(path, format!("expected 16-bit grayscale, found {:?} {:?}", d.color, d.depth)));
    }
    let values = d.data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((d.width, d.height, values))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    #[serde(default)]
    pub name: String,
}

/// Float plane: `u32 header length`, JSON header, then row-major,
/// channel-interleaved little-endian f32.
pub fn encode_plane(header: &PlaneHeader, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != header.width * header.height * header.channels {
        return Err(Error::InvalidConfig(format!(
            "plane '{}' has {} values, header expects {}",
            header.name,
            data.len(),
            header.width * header.height * header.channels
        )));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(4 + json.len() + 4 * data.len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_plane(bytes: &[u8], path: &Path) -> Result<(PlaneHeader, Vec<f32>)> {
    if bytes.len() < 4 {
        return Err(Error::malformed(path, "truncated plane header"));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = bytes.get(4..4 + n).ok_or_else(|| Error::malformed(path, "truncated plane header"))?;
    let header: PlaneHeader = serde_json::from_slice(body).map_err(|e| Error::malformed(path, e.to_string()))?;
    let raw = &bytes[4 + n..];
    let expected = 4 * header.width * header.height * header.channels;
    if raw.len() != expected {
        return Err(Error::malformed(path, format!("plane has {} data bytes, expected {expected}", raw.len())));
    }
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, data))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)?;
    Ok(bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::malformed(path, e.to_string()))
}

/// Fixed blue-to-yellow color map for scores in `[0, 1]`.
pub fn colormap(score: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.267, 0.005, 0.329],
        [0.229, 0.322, 0.546],
        [0.128, 0.567, 0.551],
        [0.369, 0.789, 0.383],
        [0.993, 0.906, 0.144],
    ];
    let s = if score.is_finite() { score.clamp(0.0, 1.0) } else { 0.0 };
    let x = s * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f;
        out[c] = (v * 255.0).round() as u8;
    }
    out
}

pub fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}
