//! Object and relationship queries against a trained field.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::embedding::{EmbeddingTable, CANONICAL_PHRASES};
use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::io::{self, PlaneHeader};
use crate::math::{cosine, dot, normalized, sigmoid, Vec3};
use crate::render::{march_pixel, render_frame, Camera, Heads, RayMarch, RenderOptions};

/// Canonical phrases every relationship query competes against.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevancyConfig {
    pub phrases: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
}

impl RelevancyConfig {
    pub fn new(phrases: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if phrases.is_empty() || phrases.len() != embeddings.len() {
            return Err(Error::InvalidConfig("relevancy needs at least one canonical phrase with an embedding".into()));
        }
        let embeddings = embeddings
            .iter()
            .map(|e| normalized(e).ok_or_else(|| Error::InvalidConfig("canonical embedding has zero norm".into())))
            .collect::<Result<_>>()?;
        Ok(Self { phrases, embeddings })
    }

    pub fn from_table(table: &EmbeddingTable, phrases: &[&str]) -> Result<Self> {
        let embeddings = phrases.iter().map(|p| table.embedding(p)).collect::<Result<_>>()?;
        Self::new(phrases.iter().map(|p| p.to_string()).collect(), embeddings)
    }

    /// "and", "next to", "none".
    pub fn canonical(table: &EmbeddingTable) -> Result<Self> {
        Self::from_table(table, &CANONICAL_PHRASES)
    }
}

/// `min_c sigmoid(φ_q·r̂ − φ_c·r̂)`. A zero-norm `r` scores 0.
pub fn relevancy(r: &[f64], query: &[f64], canon: &RelevancyConfig) -> f64 {
    let Some(r) = normalized(r) else {
        return 0.0;
    };
    let q = dot(query, &r);
    canon
        .embeddings
        .iter()
        .map(|c| sigmoid(q - dot(c, &r)))
        .fold(f64::INFINITY, f64::min)
}

/// Cosine mapped from `[-1, 1]` to `[0, 1]`.
pub fn object_score(feature: &[f64], query: &[f64]) -> f64 {
    0.5 * (cosine(feature, query) + 1.0)
}

/// Which role the clicked location plays in the queried relationship.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// The click is the subject; responses land on objects.
    #[default]
    #[serde(rename = "subj")]
    Subject,
    /// The click is the object; responses land on subjects.
    #[serde(rename = "obj")]
    Object,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subj" | "subject" => Ok(Direction::Subject),
            "obj" | "object" => Ok(Direction::Object),
            _ => Err(Error::InvalidConfig(format!("direction must be 'subj' or 'obj', got '{s}'"))),
        }
    }
}

/// Query text resolved to a unit embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryVector {
    pub text: String,
    pub embedding: Vec<f64>,
}

impl QueryVector {
    pub fn from_text(table: &EmbeddingTable, text: &str) -> Result<Self> {
        Ok(Self {
            text: text.trim().to_string(),
            embedding: table.embedding(text)?,
        })
    }

    pub fn raw(text: &str, embedding: &[f64]) -> Result<Self> {
        let embedding = normalized(embedding).ok_or_else(|| Error::InvalidConfig("query embedding has zero norm".into()))?;
        Ok(Self {
            text: text.to_string(),
            embedding,
        })
    }
}

/// Where a query is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum Domain<'a> {
    Frame(&'a Camera),
    Points(&'a [Vec3]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryOptions {
    pub samples: usize,
    pub hit_threshold: f64,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            hit_threshold: 0.5,
        }
    }
}

impl QueryOptions {
    fn render(&self) -> RenderOptions {
        RenderOptions {
            samples: self.samples,
            hit_threshold: self.hit_threshold,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Click {
    pub pixel: [usize; 2],
    pub depth: Option<f64>,
    pub point: Option<Vec3>,
}

impl Click {
    pub fn is_hit(&self) -> bool {
        self.point.is_some()
    }
}

/// Query location at the expected depth along the clicked pixel's ray.
pub fn click_to_query(field: &RadianceField, camera: &Camera, pixel: [usize; 2], opts: &QueryOptions) -> Result<Click> {
    let m = march_pixel(field, camera, pixel[0] as i64, pixel[1] as i64, opts.samples)?;
    let depth = m.expected_depth(opts.hit_threshold);
    Ok(Click {
        pixel,
        depth,
        point: depth.map(|t| m.ray.at(t)),
    })
}

/// Scores over a frame (row-major) or a point list.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub text: String,
    pub direction: Option<Direction>,
    pub click: Option<Click>,
    pub frame: Option<u32>,
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
    /// Elements that hit a surface (always true for points).
    pub valid: Vec<bool>,
    /// The click missed every surface; scores are all zero.
    pub no_hit: bool,
}

impl QueryResult {
    pub fn stats(&self) -> ScoreStats {
        let vals: Vec<f64> = self.scores.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(s, _)| *s).collect();
        let n = vals.len();
        ScoreStats {
            count: self.scores.len(),
            valid: n,
            min: if n == 0 { 0.0 } else { vals.iter().copied().fold(f64::INFINITY, f64::min) },
            max: if n == 0 { 0.0 } else { vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) },
            mean: if n == 0 { 0.0 } else { vals.iter().sum::<f64>() / n as f64 },
            no_hit: self.no_hit,
        }
    }

    pub fn record(&self) -> QueryRecord {
        QueryRecord {
            text: self.text.clone(),
            click: self.click.as_ref().map(|c| c.pixel),
            click_point: self.click.as_ref().and_then(|c| c.point.map(|p| [p.x, p.y, p.z])),
            direction: self.direction,
            frame: self.frame,
            stats: self.stats(),
        }
    }

    /// 8-bit color-mapped heatmap; invalid pixels are black.
    pub fn heatmap_rgb(&self) -> Vec<u8> {
        self.scores
            .iter()
            .zip(&self.valid)
            .flat_map(|(s, v)| if *v { io::colormap(*s) } else { [0; 3] })
            .collect()
    }

    /// Writes `<stem>.png`, `<stem>.f32` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        if self.height == 0 {
            return Err(Error::InvalidConfig("only frame queries can be exported as heatmaps".into()));
        }
        io::write_file(&dir.join(format!("{stem}.png")), &io::encode_rgb8(self.width, self.height, &self.heatmap_rgb())?)?;
        let header = PlaneHeader {
            width: self.width,
            height: self.height,
            channels: 1,
            name: self.text.clone(),
        };
        let data: Vec<f32> = self.scores.iter().map(|&s| s as f32).collect();
        io::write_file(&dir.join(format!("{stem}.f32")), &io::encode_plane(&header, &data)?)?;
        io::write_json(&dir.join(format!("{stem}.json")), &self.record())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub count: usize,
    pub valid: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub no_hit: bool,
}

/// Contents of a query's JSON record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub text: String,
    pub click: Option<[usize; 2]>,
    #[serde(default)]
    pub click_point: Option<[f64; 3]>,
    pub direction: Option<Direction>,
    pub frame: Option<u32>,
    pub stats: ScoreStats,
}

/// Semantic similarity to `query` over the domain.
pub fn query_object(field: &RadianceField, query: &QueryVector, domain: Domain<'_>, opts: &QueryOptions) -> Result<QueryResult> {
    if query.embedding.len() != field.semantic.channels {
        return Err(Error::InvalidConfig(format!(
            "query embedding has {} dims, semantic head has {}",
            query.embedding.len(),
            field.semantic.channels
        )));
    }
    let d = field.semantic.channels;
    let (scores, valid, width, height, frame) = match domain {
        Domain::Frame(cam) => {
            let r = render_frame(field, cam, Heads { semantic: true, ..Default::default() }, &opts.render())?;
            let sem = r.semantic.expect("semantic requested");
            let scores = sem.chunks(d).map(|f| object_score(f, &query.embedding)).collect();
            let valid = r.opacity.iter().map(|o| *o >= opts.hit_threshold).collect();
            (scores, valid, cam.width, cam.height, Some(cam.id))
        }
        Domain::Points(pts) => {
            let scores = pts
                .par_iter()
                .map(|p| Ok(object_score(&field.semantic.trilerp(p)?, &query.embedding)))
                .collect::<Result<Vec<f64>>>()?;
            (scores, vec![true; pts.len()], pts.len(), 0, None)
        }
    };
    Ok(QueryResult {
        text: query.text.clone(),
        direction: None,
        click: None,
        frame,
        width,
        height,
        scores,
        valid,
        no_hit: false,
    })
}

/// Relationship feature between a point and the query location for the
/// given direction.
pub fn directed_relation(field: &RadianceField, p: &Vec3, z: &Vec3, direction: Direction) -> Result<Vec<f64>> {
    match direction {
        Direction::Subject => field.relation_forward(p, z),
        Direction::Object => field.relation_forward(z, p),
    }
}

/// Composited relation feature along a density pass.
pub fn render_directed_relation(field: &RadianceField, m: &RayMarch, z: &Vec3, direction: Direction) -> Result<Vec<f64>> {
    if direction == Direction::Subject {
        return crate::relation::render_relation(field, m, z);
    }
    let mut out = vec![0.0; field.fusion.output];
    for k in 0..m.len() {
        let w = m.weights[k];
        if w == 0.0 {
            continue;
        }
        let r = field.relation_forward(z, &m.point(k))?;
        for (o, v) in out.iter_mut().zip(&r) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Relationship response ρ to `query` relative to the query location.
pub fn query_relation(
    field: &RadianceField,
    click: &Click,
    query: &QueryVector,
    canon: &RelevancyConfig,
    domain: Domain<'_>,
    direction: Direction,
    opts: &QueryOptions,
) -> Result<QueryResult> {
    if query.embedding.len() != field.fusion.output {
        return Err(Error::InvalidConfig(format!(
            "query embedding has {} dims, relation head has {}",
            query.embedding.len(),
            field.fusion.output
        )));
    }
    let (n, width, height, frame) = match domain {
        Domain::Frame(cam) => (cam.pixel_count(), cam.width, cam.height, Some(cam.id)),
        Domain::Points(pts) => (pts.len(), pts.len(), 0, None),
    };
    let mut result = QueryResult {
        text: query.text.clone(),
        direction: Some(direction),
        click: Some(click.clone()),
        frame,
        width,
        height,
        scores: vec![0.0; n],
        valid: vec![false; n],
        no_hit: click.point.is_none(),
    };
    let Some(z) = click.point else {
        return Ok(result);
    };
    if !field.bounds().contains(&z) {
        return Err(Error::OutOfBounds {
            x: z.x,
            y: z.y,
            z: z.z,
        });
    }
    let per: Vec<(f64, bool)> = match domain {
        Domain::Frame(cam) => (0..n)
            .into_par_iter()
            .map(|i| {
                let m = march_pixel(field, cam, (i % cam.width) as i64, (i / cam.width) as i64, opts.samples)?;
                if m.opacity() < opts.hit_threshold {
                    return Ok((0.0, false));
                }
                let r = render_directed_relation(field, &m, &z, direction)?;
                Ok((relevancy(&r, &query.embedding, canon), true))
            })
            .collect::<Result<_>>()?,
        Domain::Points(pts) => pts
            .par_iter()
            .map(|p| Ok((relevancy(&directed_relation(field, p, &z, direction)?, &query.embedding, canon), true)))
            .collect::<Result<_>>()?,
    };
    for (i, (s, v)) in per.into_iter().enumerate() {
        result.scores[i] = s;
        result.valid[i] = v;
    }
    Ok(result)
}

/// Elements scoring at least the `(1 − fraction)` quantile of the valid
/// scores; ties are included. Invalid elements are never selected.
pub fn top_fraction_mask(scores: &[f64], valid: Option<&[bool]>, fraction: f64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let ok = |i: usize| valid.is_none_or(|v| v[i]);
    let mut vals: Vec<f64> = (0..scores.len()).filter(|&i| ok(i)).map(|i| scores[i]).collect();
    if vals.is_empty() {
        return Ok(vec![false; scores.len()]);
    }
    vals.sort_by(|a, b| b.total_cmp(a));
    let keep = ((fraction * vals.len() as f64).ceil() as usize).clamp(1, vals.len());
    let threshold = vals[keep - 1];
    Ok((0..scores.len()).map(|i| ok(i) && scores[i] >= threshold).collect())
}

/// Pixel of instance `id` closest to the instance's pixel centroid.
pub fn pick_pixel(ids: &[u16], width: usize, id: u16) -> Option<[usize; 2]> {
    let pix: Vec<[usize; 2]> = ids.iter().enumerate().filter(|(_, v)| **v == id).map(|(i, _)| [i % width, i / width]).collect();
    if pix.is_empty() {
        return None;
    }
    let n = pix.len() as f64;
    let cu = pix.iter().map(|p| p[0] as f64).sum::<f64>() / n;
    let cv = pix.iter().map(|p| p[1] as f64).sum::<f64>() / n;
    let d = |p: &[usize; 2]| (p[0] as f64 - cu).powi(2) + (p[1] as f64 - cv).powi(2);
    pix.into_iter().min_by(|a, b| d(a).total_cmp(&d(b)))
}

/// Mean score of the elements carrying each id (valid or not).
pub fn region_means(scores: &[f64], ids: &[u16]) -> std::collections::BTreeMap<u16, f64> {
    let mut acc = std::collections::BTreeMap::<u16, (f64, usize)>::new();
    for (s, id) in scores.iter().zip(ids) {
        let e = acc.entry(*id).or_default();
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
