//! Scene-graph extraction: point sampling, DBSCAN over instance features,
//! pairwise relationship responses, label scoring and top-k recall.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::annotate::GroundTruthGraph;
use crate::data::embedding::{EmbeddingTable, CANONICAL_PHRASES};
use crate::data::raytrace::nearest_instance;
use crate::data::SceneSpec;
use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::io;
use crate::math::{cosine, normalized, normalized_mean, Vec3};
use crate::query::{relevancy, RelevancyConfig};
use crate::render::{march_pixel, Camera};

/// Minimum response for an edge to be kept.
pub const EDGE_THRESHOLD: f64 = 0.5;
pub const GRAPH_SCHEMA_VERSION: u32 = 1;
const SIDECAR_MAGIC: &[u8; 4] = b"RGEB";

/// A sampled location with its view-independent features.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPoint {
    pub position: Vec3,
    pub semantic: Vec<f64>,
    pub instance: Vec<f64>,
}

/// Where extraction points come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PointSource {
    /// Expected-depth surface points of every `stride`-th pixel of the given cameras.
    Surfaces { cameras: Vec<Camera>, stride: usize },
    /// Grid vertices whose density is at or above the given quantile, and at least `min_sigma`.
    DensityQuantile { quantile: f64, min_sigma: f64 },
    /// A supplied point cloud.
    Cloud(Vec<Vec3>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOptions {
    pub samples: usize,
    pub hit_threshold: f64,
    /// Points beyond this count are thinned with a fixed stride.
    pub max_points: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            samples: 64,
            hit_threshold: 0.5,
            max_points: 6000,
        }
    }
}

pub fn features_at(field: &RadianceField, points: &[Vec3]) -> Result<Vec<FieldPoint>> {
    points
        .par_iter()
        .map(|p| {
            Ok(FieldPoint {
                position: *p,
                semantic: field.semantic.trilerp(p)?,
                instance: field.instance.trilerp(p)?,
            })
        })
        .collect()
}

pub fn sample_points(field: &RadianceField, source: &PointSource, opts: &SamplingOptions) -> Result<Vec<FieldPoint>> {
    let mut pts: Vec<Vec3> = match source {
        PointSource::Cloud(c) => return features_at(field, c),
        PointSource::Surfaces { cameras, stride } => {
            let stride = (*stride).max(1);
            let mut out = Vec::new();
            for cam in cameras {
                let pix: Vec<(usize, usize)> = (0..cam.height).step_by(stride).flat_map(|v| (0..cam.width).step_by(stride).map(move |u| (u, v))).collect();
                let hits: Vec<Option<Vec3>> = pix
                    .par_iter()
                    .map(|&(u, v)| Ok(march_pixel(field, cam, u as i64, v as i64, opts.samples)?.surface_point(opts.hit_threshold)))
                    .collect::<Result<_>>()?;
                out.extend(hits.into_iter().flatten().filter(|p| field.bounds().contains(p)));
            }
            out
        }
        PointSource::DensityQuantile { quantile, min_sigma } => {
            let g = &field.density;
            let sig: Vec<f64> = g.values.iter().map(|&x| crate::math::softplus(x)).collect();
            let mut sorted = sig.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let q = quantile.clamp(0.0, 1.0);
            let cut = sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)].max(*min_sigma);
            let [nx, ny, nz] = g.resolution;
            let mut out = Vec::new();
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        if sig[g.vertex_index(x, y, z)] >= cut {
                            out.push(g.vertex_position(x, y, z));
                        }
                    }
                }
            }
            out
        }
    };
    if pts.is_empty() {
        return Err(Error::InvalidConfig("no points reach the sampling criterion; is the field trained?".into()));
    }
    if pts.len() > opts.max_points {
        let step = pts.len().div_ceil(opts.max_points);
        pts = pts.into_iter().step_by(step).collect();
    }
    features_at(field, &pts)
}

/// Reads `x y z` vertices from an ASCII PLY file.
pub fn read_ply(path: &Path) -> Result<Vec<Vec3>> {
    let text = String::from_utf8(io::read_file(path)?).map_err(|_| Error::malformed(path, "PLY is not UTF-8 text"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::malformed(path, "missing 'ply' magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", f, ..] if *f != "ascii" => return Err(Error::malformed(path, "only ASCII PLY is supported")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::malformed(path, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", .., name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::malformed(path, "no vertex element"))?;
    let idx = |n: &str| props.iter().position(|p| p == n).ok_or_else(|| Error::malformed(path, format!("vertex has no '{n}' property")));
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
    let mut out = Vec::with_capacity(count);
    for line in lines.filter(|l| !l.trim().is_empty()).take(count) {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| Error::malformed(path, format!("bad vertex line '{line}'"))))
            .collect::<Result<_>>()?;
        if v.len() < props.len() {
            return Err(Error::malformed(path, format!("short vertex line '{line}'")));
        }
        out.push(Vec3::new(v[ix], v[iy], v[iz]));
    }
    if out.len() != count {
        return Err(Error::malformed(path, format!("expected {count} vertices, found {}", out.len())));
    }
    Ok(out)
}

pub fn write_ply(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut s = format!("ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n", points.len());
    for p in points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    io::write_file(path, s.as_bytes())
}

/// DBSCAN label per point; `None` is noise. Clusters are numbered in the
/// order their first core point appears.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= eps2)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if !core[i] || labels[i].is_some() {
            continue;
        }
        labels[i] = Some(next);
        let mut queue = std::collections::VecDeque::from([i]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub score: f64,
}

/// Cosine to each label mapped to `[0, 1]`, best first; ties by label.
pub fn score_labels(embedding: &[f64], labels: &[(String, Vec<f64>)]) -> Vec<LabelScore> {
    let mut out: Vec<LabelScore> = labels
        .iter()
        .map(|(l, e)| LabelScore {
            label: l.clone(),
            score: 0.5 * (cosine(embedding, e) + 1.0),
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)));
    out
}

pub fn table_labels(table: &EmbeddingTable, skip: &[&str]) -> Vec<(String, Vec<f64>)> {
    table
        .phrases
        .iter()
        .enumerate()
        .filter(|(_, p)| !skip.contains(&p.as_str()))
        .map(|(i, p)| (p.clone(), table.row_f64(i)))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Normalized mean of the per-point relation features.
    #[default]
    Mean,
    /// Element-wise max of the unit-normalized per-point features.
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    pub eps: f64,
    pub min_pts: usize,
    /// Clusters smaller than this fraction of all points are dropped.
    pub min_cluster_fraction: f64,
    pub aggregation: Aggregation,
    pub threshold: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            eps: 0.3,
            min_pts: 12,
            min_cluster_fraction: 0.01,
            aggregation: Aggregation::Mean,
            threshold: EDGE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub id: u32,
    pub centroid: [f64; 3],
    /// Member point nearest the centroid; used as the query location.
    pub anchor: [f64; 3],
    /// Indices into the extraction point list.
    pub members: Vec<u32>,
    pub semantic: Vec<f32>,
    pub instance: Vec<f32>,
    pub labels: Vec<LabelScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub subject: u32,
    pub object: u32,
    pub rho: f64,
    pub embedding: Vec<f32>,
    pub predicates: Vec<LabelScore>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn f32_to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Clusters points by instance feature; each cluster becomes a node with
/// labels scored against `object_labels`.
pub fn extract_instances(points: &[FieldPoint], object_labels: &[(String, Vec<f64>)], opts: &GraphOptions) -> Vec<GraphNode> {
    let inst: Vec<Vec<f64>> = points.iter().map(|p| p.instance.clone()).collect();
    let labels = dbscan(&inst, opts.eps, opts.min_pts);
    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            groups.entry(*l).or_default().push(i as u32);
        }
    }
    let min_size = (opts.min_cluster_fraction * points.len() as f64).ceil() as usize;
    let mut nodes = Vec::new();
    for members in groups.into_values().filter(|m| m.len() >= min_size.max(opts.min_pts)) {
        let n = members.len() as f64;
        let c = members.iter().fold(Vec3::zeros(), |a, &i| a + points[i as usize].position) / n;
        let anchor = members
            .iter()
            .map(|&i| points[i as usize].position)
            .min_by(|a, b| (a - c).norm().total_cmp(&(b - c).norm()))
            .expect("non-empty cluster");
        let sd = points[0].semantic.len();
        let semantic = normalized_mean(members.iter().map(|&i| points[i as usize].semantic.as_slice()), sd).unwrap_or_else(|| vec![0.0; sd]);
        let id = points[0].instance.len();
        let mut instance = vec![0.0; id];
        for &i in &members {
            for (a, x) in instance.iter_mut().zip(&points[i as usize].instance) {
                *a += x / n;
            }
        }
        let semantic = to_f32(&semantic);
        nodes.push(GraphNode {
            id: nodes.len() as u32,
            centroid: [c.x, c.y, c.z],
            anchor: [anchor.x, anchor.y, anchor.z],
            members,
            labels: score_labels(&f32_to_f64(&semantic), object_labels),
            semantic,
            instance: to_f32(&instance),
        });
    }
    nodes
}

/// Relation feature of `(subject, object)`: features at the object's points
/// against the subject's anchor, aggregated.
pub fn pair_embedding(field: &RadianceField, points: &[FieldPoint], subject: &GraphNode, object: &GraphNode, aggregation: Aggregation) -> Result<Vec<f64>> {
    let z = Vec3::from(subject.anchor);
    let feats: Vec<Vec<f64>> = object
        .members
        .iter()
        .map(|&i| field.relation_forward(&points[i as usize].position, &z))
        .collect::<Result<_>>()?;
    let d = field.fusion.output;
    Ok(match aggregation {
        Aggregation::Mean => normalized_mean(feats.iter().map(|f| f.as_slice()), d),
        Aggregation::Max => {
            let mut acc = vec![f64::NEG_INFINITY; d];
            for f in feats.iter().filter_map(|f| normalized(f)) {
                for (a, x) in acc.iter_mut().zip(&f) {
                    *a = a.max(*x);
                }
            }
            if acc[0].is_finite() {
                normalized(&acc)
            } else {
                None
            }
        }
    }
    .unwrap_or_else(|| vec![0.0; d]))
}

/// Every ordered pair of distinct nodes, kept when its best predicate response reaches the threshold.
pub fn pairwise_relations(
    field: &RadianceField,
    points: &[FieldPoint],
    nodes: &[GraphNode],
    predicates: &[(String, Vec<f64>)],
    canon: &RelevancyConfig,
    opts: &GraphOptions,
) -> Result<Vec<GraphEdge>> {
    let pairs: Vec<(usize, usize)> = (0..nodes.len()).flat_map(|i| (0..nodes.len()).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let edges: Vec<Option<GraphEdge>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let emb = to_f32(&pair_embedding(field, points, &nodes[i], &nodes[j], opts.aggregation)?);
            let r = f32_to_f64(&emb);
            let mut scored: Vec<LabelScore> = predicates
                .iter()
                .map(|(l, e)| LabelScore {
                    label: l.clone(),
                    score: relevancy(&r, e, canon),
                })
                .collect();
            scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)));
            let rho = scored.first().map_or(0.0, |s| s.score);
            Ok((rho >= opts.threshold).then(|| GraphEdge {
                subject: nodes[i].id,
                object: nodes[j].id,
                rho,
                embedding: emb,
                predicates: scored,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(edges.into_iter().flatten().collect())
}

/// Label sets used for extraction.
pub struct GraphVocab {
    pub objects: Vec<(String, Vec<f64>)>,
    pub predicates: Vec<(String, Vec<f64>)>,
    pub canon: RelevancyConfig,
}

impl GraphVocab {
    /// Object labels minus "background"; predicates minus the canonical phrases.
    pub fn new(objects: &EmbeddingTable, relations: &EmbeddingTable) -> Result<Self> {
        Ok(Self {
            objects: table_labels(objects, &[crate::data::embedding::BACKGROUND_PHRASE]),
            predicates: table_labels(relations, &CANONICAL_PHRASES),
            canon: RelevancyConfig::canonical(relations)?,
        })
    }
}

pub fn extract_graph(field: &RadianceField, points: &[FieldPoint], vocab: &GraphVocab, opts: &GraphOptions) -> Result<SceneGraph> {
    let nodes = extract_instances(points, &vocab.objects, opts);
    if nodes.is_empty() {
        log::warn!("no instance clusters found; the graph is empty");
    }
    let edges = pairwise_relations(field, points, &nodes, &vocab.predicates, &vocab.canon, opts)?;
    Ok(SceneGraph { nodes, edges })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NodeJson {
    id: u32,
    centroid: [f64; 3],
    anchor: [f64; 3],
    n_points: usize,
    labels: Vec<LabelScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EdgeJson {
    subject: u32,
    object: u32,
    rho: f64,
    predicates: Vec<LabelScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GraphJson {
    schema_version: u32,
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

impl SceneGraph {
    /// JSON summary; embeddings and memberships live in the sidecar.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let g = GraphJson {
            schema_version: GRAPH_SCHEMA_VERSION,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.id,
                    centroid: n.centroid,
                    anchor: n.anchor,
                    n_points: n.members.len(),
                    labels: n.labels.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    subject: e.subject,
                    object: e.object,
                    rho: e.rho,
                    predicates: e.predicates.clone(),
                })
                .collect(),
        };
        let mut v = serde_json::to_vec_pretty(&g)?;
        v.push(b'\n');
        Ok(v)
    }

    /// Little-endian sidecar: magic, version, then per node the members,
    /// semantic and instance embeddings, then per edge its embedding.
    pub fn sidecar(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SIDECAR_MAGIC);
        let u = |out: &mut Vec<u8>, x: u32| out.extend_from_slice(&x.to_le_bytes());
        let fs = |out: &mut Vec<u8>, v: &[f32]| {
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        };
        u(&mut out, GRAPH_SCHEMA_VERSION);
        u(&mut out, self.nodes.len() as u32);
        for n in &self.nodes {
            u(&mut out, n.members.len() as u32);
            n.members.iter().for_each(|m| out.extend_from_slice(&m.to_le_bytes()));
            fs(&mut out, &n.semantic);
            fs(&mut out, &n.instance);
        }
        u(&mut out, self.edges.len() as u32);
        for e in &self.edges {
            fs(&mut out, &e.embedding);
        }
        out
    }

    /// Writes `graph.json` and `graph_emb.bin` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        io::write_file(&dir.join("graph.json"), &self.to_json()?)?;
        io::write_file(&dir.join("graph_emb.bin"), &self.sidecar())
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let jpath = dir.join("graph.json");
        let g: GraphJson = io::read_json(&jpath)?;
        if g.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: jpath,
                found: g.schema_version,
                expected: GRAPH_SCHEMA_VERSION,
            });
        }
        let bpath = dir.join("graph_emb.bin");
        let bytes = io::read_file(&bpath)?;
        let mut r = Reader { b: &bytes, pos: 0, path: &bpath };
        if r.take(4)? != SIDECAR_MAGIC {
            return Err(Error::malformed(&bpath, "bad sidecar magic"));
        }
        if r.u32()? != GRAPH_SCHEMA_VERSION {
            return Err(Error::malformed(&bpath, "sidecar version mismatch"));
        }
        if r.u32()? as usize != g.nodes.len() {
            return Err(Error::malformed(&bpath, "sidecar node count differs from graph.json"));
        }
        let mut nodes = Vec::with_capacity(g.nodes.len());
        for n in g.nodes {
            let k = r.u32()? as usize;
            let members = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if members.len() != n.n_points {
                return Err(Error::malformed(&bpath, format!("node {} member count differs", n.id)));
            }
            nodes.push(GraphNode {
                id: n.id,
                centroid: n.centroid,
                anchor: n.anchor,
                members,
                semantic: r.f32s()?,
                instance: r.f32s()?,
                labels: n.labels,
            });
        }
        if r.u32()? as usize != g.edges.len() {
            return Err(Error::malformed(&bpath, "sidecar edge count differs from graph.json"));
        }
        let mut edges = Vec::with_capacity(g.edges.len());
        for e in g.edges {
            edges.push(GraphEdge {
                subject: e.subject,
                object: e.object,
                rho: e.rho,
                embedding: r.f32s()?,
                predicates: e.predicates,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed(&bpath, "trailing bytes in sidecar"));
        }
        Ok(SceneGraph { nodes, edges })
    }

    pub fn node(&self, id: u32) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, subject: u32, object: u32) -> Option<&GraphEdge> {
        self.edges.iter().find(|e| e.subject == subject && e.object == object)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self.b.get(self.pos..self.pos + n).ok_or_else(|| Error::malformed(self.path, "truncated sidecar"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()? as usize;
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Surface-distance tolerance for ground-truth assignment: two cells of the density grid.
pub fn assignment_tolerance(field: &RadianceField) -> f64 {
    2.0 * field.density.max_cell_edge()
}

/// Ground-truth instance per point: nearest surface within `tolerance`.
pub fn ground_truth_ids(scene: &SceneSpec, points: &[Vec3], tolerance: f64) -> Vec<Option<u16>> {
    points.iter().map(|p| nearest_instance(scene, p, tolerance)).collect()
}

/// Predicted node ↔ ground-truth instance correspondence with point IoUs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMatching {
    /// `(node id, gt id, point overlap, IoU)` in matching order.
    pub pairs: Vec<(u32, u16, usize, f64)>,
}

impl NodeMatching {
    /// Greedy one-to-one matching by descending point overlap (ties by node, then gt id).
    pub fn greedy(graph: &SceneGraph, gt_ids: &[Option<u16>]) -> Self {
        let mut gt_sizes: BTreeMap<u16, usize> = BTreeMap::new();
        for g in gt_ids.iter().flatten() {
            *gt_sizes.entry(*g).or_default() += 1;
        }
        let mut cand = Vec::new();
        for n in &graph.nodes {
            let mut overlap: BTreeMap<u16, usize> = BTreeMap::new();
            for &m in &n.members {
                if let Some(Some(g)) = gt_ids.get(m as usize) {
                    *overlap.entry(*g).or_default() += 1;
                }
            }
            for (g, o) in overlap {
                cand.push((o, n.id, g, n.members.len()));
            }
        }
        cand.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_n = std::collections::BTreeSet::new();
        let mut used_g = std::collections::BTreeSet::new();
        let mut pairs = Vec::new();
        for (o, n, g, size) in cand {
            if used_n.contains(&n) || used_g.contains(&g) {
                continue;
            }
            used_n.insert(n);
            used_g.insert(g);
            let union = size + gt_sizes[&g] - o;
            pairs.push((n, g, o, o as f64 / union as f64));
        }
        Self { pairs }
    }

    pub fn node_for(&self, gt: u16) -> Option<u32> {
        self.pairs.iter().find(|p| p.1 == gt).map(|p| p.0)
    }

    pub fn iou_for(&self, gt: u16) -> f64 {
        self.pairs.iter().find(|p| p.1 == gt).map_or(0.0, |p| p.3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    Object,
    Predicate,
    Relationship,
}

/// Ground-truth edges that are scored; canonical phrases cannot win a relevancy comparison against themselves.
pub fn scorable_edges(gt: &GroundTruthGraph) -> Vec<&crate::data::annotate::GraphEdge> {
    gt.edges.iter().filter(|e| !CANONICAL_PHRASES.contains(&e.predicate.as_str())).collect()
}

fn rank_of(list: &[LabelScore], label: &str) -> Option<usize> {
    list.iter().position(|l| l.label == label)
}

/// Fraction of ground-truth items recovered within the top `k`.
pub fn topk_recall(graph: &SceneGraph, gt: &GroundTruthGraph, matching: &NodeMatching, k: usize, mode: RecallMode) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let hits_total = match mode {
        RecallMode::Object => {
            let hits = gt
                .nodes
                .iter()
                .filter(|g| {
                    matching
                        .node_for(g.id)
                        .and_then(|n| graph.node(n))
                        .and_then(|n| rank_of(&n.labels, &g.class))
                        .is_some_and(|r| r < k)
                })
                .count();
            (hits, gt.nodes.len())
        }
        RecallMode::Predicate | RecallMode::Relationship => {
            let edges = scorable_edges(gt);
            let hits = edges
                .iter()
                .filter(|e| {
                    let (Some(s), Some(o)) = (matching.node_for(e.subject), matching.node_for(e.object)) else {
                        return false;
                    };
                    let Some(edge) = graph.edge(s, o) else {
                        return false;
                    };
                    if mode == RecallMode::Predicate {
                        return rank_of(&edge.predicates, &e.predicate).is_some_and(|r| r < k);
                    }
                    let (Some(sn), Some(on)) = (graph.node(s), graph.node(o)) else {
                        return false;
                    };
                    let (Some(sc), Some(oc)) = (gt.class_of(e.subject), gt.class_of(e.object)) else {
                        return false;
                    };
                    triplet_rank(sn, edge, on, (sc, &e.predicate, oc)).is_some_and(|r| r < k)
                })
                .count();
            (hits, edges.len())
        }
    };
    if hits_total.1 == 0 {
        return Err(Error::InvalidConfig(format!("ground truth has nothing to recall for {mode:?}")));
    }
    Ok(hits_total.0 as f64 / hits_total.1 as f64)
}

/// Rank of a `(subject, predicate, object)` triplet among all candidates of
/// one edge scored by the product of the three scores.
pub fn triplet_rank(subject: &GraphNode, edge: &GraphEdge, object: &GraphNode, target: (&str, &str, &str)) -> Option<usize> {
    let key = |s: &LabelScore, p: &LabelScore, o: &LabelScore| s.score * p.score * o.score;
    let mut target_score = None;
    for s in &subject.labels {
        for p in &edge.predicates {
            for o in &object.labels {
                if (s.label.as_str(), p.label.as_str(), o.label.as_str()) == target {
                    target_score = Some(key(s, p, o));
                }
            }
        }
    }
    let t = target_score?;
    let mut better = 0;
    for s in &subject.labels {
        for p in &edge.predicates {
            for o in &object.labels {
                let v = key(s, p, o);
                let tie_before = v == t && (s.label.as_str(), p.label.as_str(), o.label.as_str()) < target;
                if v > t || tie_before {
                    better += 1;
                }
            }
        }
    }
    Some(better)
}
