//! Relationship-guided instance segmentation: template query parsing,
//! relationship-filtered localization and the benchmark harness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::annotate::GroundTruthGraph;
use crate::data::scene::{cuboid, sphere};
use crate::data::{CameraRing, Dataset, DatasetConfig, SceneSpec};
use crate::error::{Error, Result};
use crate::field::{load_checkpoint, RadianceField};
use crate::graph::{
    assignment_tolerance, extract_instances, ground_truth_ids, pair_embedding, sample_points, Aggregation, FieldPoint, GraphNode, GraphOptions, GraphVocab,
    PointSource, SamplingOptions,
};
use crate::io;
use crate::query::relevancy;
use crate::train::{train, write_training_outputs, TrainConfig};

const ARTICLES: [&str; 3] = ["the", "a", "an"];
/// Relation phrases that cannot name a queried predicate.
const NON_PREDICATES: [&str; 2] = ["and", "none"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQuery {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl std::fmt::Display for ParsedQuery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

/// Predicates a query may use, drawn from a relation vocabulary.
pub fn query_predicates(phrases: &[String]) -> Vec<String> {
    phrases.iter().filter(|p| !NON_PREDICATES.contains(&p.as_str())).cloned().collect()
}

/// Splits `the? <subject> <predicate> the? <object>` at the longest
/// vocabulary predicate (earliest on ties).
pub fn parse_query(text: &str, predicates: &[String]) -> Result<ParsedQuery> {
    let err = || Error::QueryParse {
        text: text.to_string(),
        predicates: predicates.to_vec(),
    };
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    let mut best: Option<(usize, usize, &String)> = None;
    for p in predicates {
        let pt: Vec<&str> = p.split_whitespace().collect();
        if pt.is_empty() || pt.len() > tokens.len() {
            continue;
        }
        for start in 0..=tokens.len() - pt.len() {
            if tokens[start..start + pt.len()] == pt[..] {
                let better = match best {
                    None => true,
                    Some((s, len, bp)) => p.len() > bp.len() || (p.len() == bp.len() && start < s) || (p.len() == bp.len() && start == s && pt.len() > len),
                };
                if better {
                    best = Some((start, pt.len(), p));
                }
            }
        }
    }
    let (start, len, predicate) = best.ok_or_else(err)?;
    let noun = |toks: &[&str]| {
        let toks: Vec<&str> = toks.iter().copied().skip_while(|t| ARTICLES.contains(t)).collect();
        toks.join(" ")
    };
    let subject = noun(&tokens[..start]);
    let object = noun(&tokens[start + len..]);
    if subject.is_empty() || object.is_empty() {
        return Err(err());
    }
    Ok(ParsedQuery {
        subject,
        predicate: predicate.clone(),
        object,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelsegOptions {
    pub shortlist: usize,
    /// Disabled, the prediction is the argmax of the subject-noun score.
    pub filter: bool,
    pub threshold: f64,
    pub aggregation: Aggregation,
}

impl Default for RelsegOptions {
    fn default() -> Self {
        Self {
            shortlist: 5,
            filter: true,
            threshold: crate::graph::EDGE_THRESHOLD,
            aggregation: Aggregation::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node: u32,
    pub subject_score: f64,
    pub anchor: u32,
    pub object_score: f64,
    pub rho: f64,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub node: Option<u32>,
    pub score: f64,
    /// Every scored (candidate, anchor) pair.
    pub candidates: Vec<Candidate>,
}

fn label_score(node: &GraphNode, label: &str) -> Result<f64> {
    node.labels.iter().find(|l| l.label == label).map(|l| l.score).ok_or_else(|| Error::UnknownPhrase {
        phrase: label.to_string(),
        vocabulary: node.labels.iter().map(|l| l.label.clone()).collect(),
    })
}

/// Nodes whose best label is `noun`, best score first, at most `m`.
fn shortlist(nodes: &[GraphNode], noun: &str, m: usize) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        let s = label_score(n, noun)?;
        if n.labels.first().is_some_and(|l| l.label == noun) {
            out.push((i, s));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(m);
    Ok(out)
}

/// Localizes the query's subject among extracted instances.
pub fn relseg(field: &RadianceField, points: &[FieldPoint], nodes: &[GraphNode], query: &ParsedQuery, vocab: &GraphVocab, opts: &RelsegOptions) -> Result<Prediction> {
    if nodes.is_empty() {
        return Ok(Prediction::default());
    }
    if !opts.filter {
        let mut best: Option<(u32, f64)> = None;
        for n in nodes {
            let s = label_score(n, &query.subject)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((n.id, s));
            }
        }
        return Ok(Prediction {
            node: best.map(|b| b.0),
            score: best.map_or(0.0, |b| b.1),
            candidates: Vec::new(),
        });
    }
    let pred = vocab
        .predicates
        .iter()
        .find(|(l, _)| *l == query.predicate)
        .map(|(_, e)| e)
        .ok_or_else(|| Error::UnknownPhrase {
            phrase: query.predicate.clone(),
            vocabulary: vocab.predicates.iter().map(|p| p.0.clone()).collect(),
        })?;
    let subjects = shortlist(nodes, &query.subject, opts.shortlist)?;
    let anchors = shortlist(nodes, &query.object, opts.shortlist)?;
    let mut candidates = Vec::new();
    for &(si, ss) in &subjects {
        for &(ai, os) in anchors.iter().filter(|a| a.0 != si) {
            let r = pair_embedding(field, points, &nodes[si], &nodes[ai], opts.aggregation)?;
            let rho = relevancy(&r, pred, &vocab.canon);
            candidates.push(Candidate {
                node: nodes[si].id,
                subject_score: ss,
                anchor: nodes[ai].id,
                object_score: os,
                rho,
                score: ss * rho * os,
            });
        }
    }
    let best = candidates
        .iter()
        .filter(|c| c.rho >= opts.threshold)
        .fold(None::<&Candidate>, |b, c| match b {
            Some(b) if b.score > c.score || (b.score == c.score && b.node <= c.node) => Some(b),
            _ => Some(c),
        });
    Ok(Prediction {
        node: best.map(|c| c.node),
        score: best.map_or(0.0, |c| c.score),
        candidates,
    })
}

/// IoU of two index sets; two empty sets score 0.
pub fn point_iou(a: &[u32], b: &[u32]) -> f64 {
    let a: BTreeSet<u32> = a.iter().copied().collect();
    let b: BTreeSet<u32> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub scene: String,
    pub query: String,
    pub gt_instance_id: u16,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub scene: String,
    pub query: String,
    pub parsed: ParsedQuery,
    pub gt_instance_id: u16,
    pub predicted_node: Option<u32>,
    pub iou: f64,
    pub hit: bool,
    pub score: f64,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelSegReport {
    pub filter: bool,
    pub accuracy: f64,
    pub mean_iou: f64,
    pub queries: Vec<QueryReport>,
}

impl RelSegReport {
    pub fn from_queries(filter: bool, queries: Vec<QueryReport>) -> Self {
        let n = queries.len().max(1) as f64;
        Self {
            filter,
            accuracy: queries.iter().filter(|q| q.hit).count() as f64 / n,
            mean_iou: queries.iter().map(|q| q.iou).sum::<f64>() / n,
            queries,
        }
    }
}

/// Instance of the subject class holding the predicate toward some instance of the object class; must be unique.
pub fn ground_truth_instance(graph: &GroundTruthGraph, q: &ParsedQuery) -> Result<u16> {
    let ids: BTreeSet<u16> = graph
        .edges
        .iter()
        .filter(|e| e.predicate == q.predicate && graph.class_of(e.subject) == Some(&q.subject) && graph.class_of(e.object) == Some(&q.object))
        .map(|e| e.subject)
        .collect();
    match ids.len() {
        1 => Ok(*ids.first().unwrap()),
        n => Err(Error::InvalidConfig(format!("query '{q}' has {n} ground-truth instances, expected exactly one"))),
    }
}

/// One extracted scene ready for querying.
pub struct SceneContext {
    pub field: RadianceField,
    pub points: Vec<FieldPoint>,
    pub nodes: Vec<GraphNode>,
    pub vocab: GraphVocab,
    pub predicates: Vec<String>,
    /// Ground-truth instance per point.
    pub gt_ids: Vec<Option<u16>>,
}

impl SceneContext {
    pub fn prepare(field: RadianceField, ds: &Dataset, graph: &GraphOptions, sampling: &SamplingOptions) -> Result<Self> {
        let scene = ds.scene.as_ref().ok_or_else(|| Error::InvalidConfig("dataset carries no scene description; ground truth unavailable".into()))?;
        let source = PointSource::Surfaces {
            cameras: ds.cameras.iter().step_by(3).cloned().collect(),
            stride: 2,
        };
        let points = sample_points(&field, &source, sampling)?;
        let positions: Vec<_> = points.iter().map(|p| p.position).collect();
        let gt_ids = ground_truth_ids(scene, &positions, assignment_tolerance(&field));
        let vocab = GraphVocab::new(&ds.object_vocab, &ds.relation_vocab)?;
        let nodes = extract_instances(&points, &vocab.objects, graph);
        Ok(Self {
            field,
            points,
            nodes,
            vocab,
            predicates: query_predicates(&ds.relation_vocab.phrases),
            gt_ids,
        })
    }

    pub fn gt_points(&self, id: u16) -> Vec<u32> {
        (0..self.gt_ids.len() as u32).filter(|&i| self.gt_ids[i as usize] == Some(id)).collect()
    }

    pub fn node_points(&self, id: u32) -> &[u32] {
        self.nodes.iter().find(|n| n.id == id).map_or(&[], |n| &n.members)
    }
}

/// Scores an arbitrary predictor over the entries.
pub fn evaluate_with(
    entries: &[BenchEntry],
    scenes: &BTreeMap<String, SceneContext>,
    filter: bool,
    mut predict: impl FnMut(&SceneContext, &ParsedQuery, &BenchEntry) -> Result<(Option<Vec<u32>>, Prediction)>,
) -> Result<RelSegReport> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let ctx = scenes.get(&e.scene).ok_or_else(|| Error::InvalidConfig(format!("benchmark references unknown scene '{}'", e.scene)))?;
        let parsed = parse_query(&e.query, &ctx.predicates)?;
        let (pts, pred) = predict(ctx, &parsed, e)?;
        let iou = pts.map_or(0.0, |p| point_iou(&p, &ctx.gt_points(e.gt_instance_id)));
        out.push(QueryReport {
            scene: e.scene.clone(),
            query: e.query.clone(),
            parsed,
            gt_instance_id: e.gt_instance_id,
            predicted_node: pred.node,
            iou,
            hit: iou >= 0.5,
            score: pred.score,
            candidates: pred.candidates,
        });
    }
    Ok(RelSegReport::from_queries(filter, out))
}

pub fn evaluate(entries: &[BenchEntry], scenes: &BTreeMap<String, SceneContext>, opts: &RelsegOptions) -> Result<RelSegReport> {
    evaluate_with(entries, scenes, opts.filter, |ctx, q, _| {
        let p = relseg(&ctx.field, &ctx.points, &ctx.nodes, q, &ctx.vocab, opts)?;
        Ok((p.node.map(|n| ctx.node_points(n).to_vec()), p))
    })
}

pub fn read_bench(path: &Path) -> Result<Vec<BenchEntry>> {
    io::read_json(path)
}

/// Loads `<root>/<scene>/dataset` and `<root>/<scene>/checkpoint.rfld` for every scene named in the bench file.
pub fn load_scenes(entries: &[BenchEntry], root: &Path, graph: &GraphOptions, sampling: &SamplingOptions) -> Result<BTreeMap<String, SceneContext>> {
    let mut out = BTreeMap::new();
    for name in entries.iter().map(|e| &e.scene).collect::<BTreeSet<_>>() {
        let dir = root.join(name);
        let ds = Dataset::load(&dir.join("dataset"))?;
        let field = load_checkpoint(&dir.join("checkpoint.rfld"))?;
        out.insert(name.clone(), SceneContext::prepare(field, &ds, graph, sampling)?);
    }
    Ok(out)
}

pub fn evaluate_benchmark(bench: &Path, root: &Path, opts: &RelsegOptions) -> Result<RelSegReport> {
    let entries = read_bench(bench)?;
    let scenes = load_scenes(&entries, root, &GraphOptions::default(), &SamplingOptions::default())?;
    evaluate(&entries, &scenes, opts)
}

/// The bundled duplicate-object scenes: every queried subject class occurs at least twice.
pub fn bundled_scenes() -> Vec<(String, SceneSpec)> {
    let red = [0.8, 0.25, 0.2];
    let blue = [0.2, 0.35, 0.85];
    let green = [0.25, 0.7, 0.3];
    let tan = [0.75, 0.6, 0.4];
    let grey = [0.55, 0.55, 0.6];
    let violet = [0.6, 0.3, 0.75];
    vec![
        (
            "two_stacks".into(),
            SceneSpec::new(
                vec![
                    cuboid(1, "box", [-0.45, 0.1, 0.15], [0.2, 0.2, 0.15], 0.2, tan),
                    sphere(2, "sphere", [-0.45, 0.1, 0.45], 0.15, red),
                    cuboid(3, "box", [0.4, -0.35, 0.12], [0.18, 0.18, 0.12], -0.3, grey),
                    sphere(4, "ball", [0.4, -0.35, 0.37], 0.13, blue),
                    sphere(5, "sphere", [0.35, 0.5, 0.15], 0.15, green),
                    sphere(6, "ball", [-0.1, -0.6, 0.13], 0.13, violet),
                ],
                101,
            ),
        ),
        (
            "crates".into(),
            SceneSpec::new(
                vec![
                    cuboid(1, "crate", [-0.4, -0.3, 0.14], [0.2, 0.18, 0.14], 0.0, tan),
                    sphere(2, "ball", [-0.4, -0.3, 0.42], 0.14, blue),
                    cuboid(3, "crate", [0.45, 0.0, 0.14], [0.18, 0.2, 0.14], 0.4, grey),
                    cuboid(4, "box", [0.45, 0.0, 0.39], [0.11, 0.11, 0.11], 0.1, violet),
                    sphere(5, "ball", [-0.2, 0.55, 0.14], 0.14, red),
                    cuboid(6, "box", [0.1, -0.55, 0.1], [0.1, 0.1, 0.1], 0.3, green),
                ],
                102,
            ),
        ),
        (
            "box_tower".into(),
            SceneSpec::new(
                vec![
                    cuboid(1, "box", [-0.4, 0.0, 0.15], [0.22, 0.22, 0.15], 0.0, grey),
                    cuboid(2, "box", [-0.4, 0.0, 0.42], [0.14, 0.14, 0.12], 0.3, tan),
                    cuboid(3, "box", [0.45, 0.2, 0.12], [0.18, 0.18, 0.12], -0.2, violet),
                    sphere(4, "sphere", [0.45, 0.2, 0.39], 0.15, red),
                    sphere(5, "sphere", [0.3, -0.5, 0.15], 0.15, green),
                ],
                103,
            ),
        ),
        (
            "sphere_pair".into(),
            SceneSpec::new(
                vec![
                    cuboid(1, "crate", [-0.45, 0.2, 0.14], [0.2, 0.2, 0.14], 0.0, tan),
                    sphere(2, "sphere", [-0.45, 0.2, 0.43], 0.15, red),
                    cuboid(3, "box", [0.4, -0.25, 0.14], [0.2, 0.2, 0.14], 0.5, grey),
                    sphere(4, "sphere", [0.4, -0.25, 0.43], 0.15, green),
                ],
                104,
            ),
        ),
        (
            "lonely_ball".into(),
            SceneSpec::new(
                vec![
                    cuboid(1, "box", [0.0, -0.4, 0.14], [0.2, 0.2, 0.14], 0.1, grey),
                    sphere(2, "ball", [0.0, -0.4, 0.42], 0.14, blue),
                    sphere(3, "ball", [-0.5, 0.35, 0.14], 0.14, red),
                    cuboid(4, "box", [0.5, 0.4, 0.14], [0.18, 0.18, 0.14], -0.4, tan),
                ],
                105,
            ),
        ),
    ]
}

/// Queries per bundled scene.
pub fn bundled_queries() -> Vec<(&'static str, &'static str)> {
    vec![
        ("two_stacks", "the sphere standing on the box"),
        ("two_stacks", "the box supporting the sphere"),
        ("two_stacks", "the box supporting the ball"),
        ("two_stacks", "the ball standing on the box"),
        ("crates", "the ball standing on the crate"),
        ("crates", "the crate supporting the ball"),
        ("crates", "the crate supporting the box"),
        ("crates", "the box standing on the crate"),
        ("box_tower", "the box standing on the box"),
        ("box_tower", "the box supporting the box"),
        ("box_tower", "the box supporting the sphere"),
        ("box_tower", "the sphere standing on the box"),
        ("sphere_pair", "the sphere standing on the crate"),
        ("sphere_pair", "the sphere standing on the box"),
        ("lonely_ball", "the ball standing on the box"),
        ("lonely_ball", "the box supporting the ball"),
    ]
}

/// Bench entries with ground truth resolved from each scene's annotations.
pub fn build_benchmark(scenes: &[(String, SceneSpec)], queries: &[(&str, &str)], predicates: &[String]) -> Result<Vec<BenchEntry>> {
    let graphs: BTreeMap<&str, GroundTruthGraph> = scenes.iter().map(|(n, s)| (n.as_str(), crate::data::annotate_relations(s))).collect();
    queries
        .iter()
        .map(|(scene, query)| {
            let g = graphs.get(scene).ok_or_else(|| Error::InvalidConfig(format!("unknown scene '{scene}'")))?;
            let parsed = parse_query(query, predicates)?;
            Ok(BenchEntry {
                scene: scene.to_string(),
                query: query.to_string(),
                gt_instance_id: ground_truth_instance(g, &parsed)?,
            })
        })
        .collect()
}

/// Dataset settings used for the bundled scenes.
pub fn bundled_dataset_config() -> DatasetConfig {
    DatasetConfig {
        cameras: CameraRing::wide(),
        ..Default::default()
    }
}

/// Generates and trains every bundled scene into `root/<scene>/` and writes `root/bench.json`.
pub fn prepare_bundled(root: &Path, cfg: &TrainConfig, seed: u64, mut progress: impl FnMut(&str)) -> Result<Vec<BenchEntry>> {
    let scenes = bundled_scenes();
    let dcfg = bundled_dataset_config();
    let mut predicates = None;
    for (name, scene) in &scenes {
        progress(name);
        let ds = Dataset::generate(scene, &dcfg, seed)?;
        let dir = root.join(name);
        ds.save(&dir.join("dataset"))?;
        let outcome = train(&ds, cfg, |_| {})?;
        write_training_outputs(&dir, cfg, &outcome)?;
        predicates.get_or_insert_with(|| query_predicates(&ds.relation_vocab.phrases));
    }
    let bench = build_benchmark(&scenes, &bundled_queries(), &predicates.unwrap_or_default())?;
    io::write_json(&root.join("bench.json"), &bench)?;
    Ok(bench)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::embedding::RELATION_VOCABULARY;
    use crate::graph::LabelScore;

    fn preds() -> Vec<String> {
        query_predicates(&RELATION_VOCABULARY.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    fn pq(s: &str, p: &str, o: &str) -> ParsedQuery {
        ParsedQuery {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
        }
    }

    #[test]
    fn template_parsing() {
        let p = preds();
        assert_eq!(parse_query("the sphere standing on the box", &p).unwrap(), pq("sphere", "standing on", "box"));
        assert_eq!(parse_query("picture hanging on wall", &p).unwrap(), pq("picture", "hanging on", "wall"));
        assert_eq!(parse_query("  The BALL   on top of a Crate ", &p).unwrap(), pq("ball", "on top of", "crate"));
        assert!(matches!(parse_query("the red thing near stuff", &p), Err(Error::QueryParse { .. })));
        assert!(parse_query("standing on the box", &p).is_err());
        let longest = vec!["on".to_string(), "standing on".to_string()];
        assert_eq!(parse_query("cup standing on table", &longest).unwrap().predicate, "standing on");
    }

    #[test]
    fn parsing_is_idempotent_and_case_insensitive() {
        let p = preds();
        for q in bundled_queries().iter().map(|q| q.1).chain(["A Ball Lying On The Crate", "the box next to a sphere"]) {
            let a = parse_query(q, &p).unwrap();
            assert_eq!(parse_query(&a.to_string(), &p).unwrap(), a);
            assert_eq!(parse_query(&q.to_uppercase(), &p).unwrap(), a);
        }
    }

    #[test]
    fn iou_matches_set_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a: Vec<u32> = (0..rng.random_range(0..30)).map(|_| rng.random_range(0..40)).collect();
            let b: Vec<u32> = (0..rng.random_range(0..30)).map(|_| rng.random_range(0..40)).collect();
            let inter = (0..40).filter(|x| a.contains(x) && b.contains(x)).count();
            let union = (0..40).filter(|x| a.contains(x) || b.contains(x)).count();
            let want = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            assert_eq!(point_iou(&a, &b), want);
        }
    }

    #[test]
    fn bundled_benchmark_is_well_posed() {
        let scenes = bundled_scenes();
        assert_eq!(scenes.len(), 5);
        for (_, s) in &scenes {
            s.validate().unwrap();
        }
        let bench = build_benchmark(&scenes, &bundled_queries(), &preds()).unwrap();
        assert_eq!(bench.len(), 16);
        let find = |s: &str, q: &str| bench.iter().find(|e| e.scene == s && e.query == q).unwrap().gt_instance_id;
        assert_eq!(find("two_stacks", "the sphere standing on the box"), 2);
        assert_eq!(find("box_tower", "the box standing on the box"), 2);
        assert_eq!(find("box_tower", "the box supporting the box"), 1);
        assert_eq!(find("sphere_pair", "the sphere standing on the box"), 4);
        // every subject class is duplicated, so nouns alone cannot decide
        for e in &bench {
            let (_, scene) = scenes.iter().find(|s| s.0 == e.scene).unwrap();
            let class = &scene.primitive(e.gt_instance_id).unwrap().class;
            assert!(scene.primitives.iter().filter(|p| &p.class == class).count() >= 2, "{}", e.query);
        }
    }

    #[test]
    fn ambiguous_ground_truth_is_rejected() {
        let g = GroundTruthGraph {
            nodes: vec![],
            edges: vec![],
        };
        assert!(ground_truth_instance(&g, &pq("a", "standing on", "b")).is_err());
    }

    fn node(id: u32, labels: &[(&str, f64)]) -> GraphNode {
        GraphNode {
            id,
            centroid: [0.0; 3],
            anchor: [0.0; 3],
            members: vec![id],
            semantic: vec![],
            instance: vec![],
            labels: labels.iter().map(|(l, s)| LabelScore { label: l.to_string(), score: *s }).collect(),
        }
    }

    #[test]
    fn shortlist_requires_top_label() {
        let nodes = vec![node(0, &[("box", 0.9), ("sphere", 0.6)]), node(1, &[("sphere", 0.95), ("box", 0.4)]), node(2, &[("sphere", 0.8), ("box", 0.5)])];
        assert_eq!(shortlist(&nodes, "sphere", 5).unwrap(), vec![(1, 0.95), (2, 0.8)]);
        assert_eq!(shortlist(&nodes, "sphere", 1).unwrap().len(), 1);
        assert!(shortlist(&nodes, "crate", 5).is_err());
    }

    fn trivial_scene() -> (BTreeMap<String, SceneContext>, Vec<BenchEntry>) {
        let ds = Dataset::generate(&SceneSpec::demo(), &crate::data::DatasetConfig::default(), 1).unwrap();
        let cfg = crate::field::GridConfig {
            resolution: [4, 4, 4],
            feature_resolution: [4, 4, 4],
            ..Default::default()
        };
        let field = RadianceField::new(cfg, crate::field::FieldInit::default(), 0).unwrap();
        let positions = vec![crate::math::Vec3::new(0.0, 0.0, 0.1); 6];
        let points = crate::graph::features_at(&field, &positions).unwrap();
        let vocab = GraphVocab::new(&ds.object_vocab, &ds.relation_vocab).unwrap();
        let ctx = SceneContext {
            field,
            points,
            nodes: vec![],
            vocab,
            predicates: query_predicates(&ds.relation_vocab.phrases),
            gt_ids: vec![Some(1), Some(1), Some(2), Some(2), Some(2), None],
        };
        let entries = vec![
            BenchEntry {
                scene: "s".into(),
                query: "the sphere standing on the box".into(),
                gt_instance_id: 2,
            },
            BenchEntry {
                scene: "s".into(),
                query: "the box supporting the sphere".into(),
                gt_instance_id: 1,
            },
        ];
        (BTreeMap::from([("s".to_string(), ctx)]), entries)
    }

    #[test]
    fn oracle_and_empty_predictors() {
        let (scenes, entries) = trivial_scene();
        let oracle = evaluate_with(&entries, &scenes, true, |ctx, _, e| Ok((Some(ctx.gt_points(e.gt_instance_id)), Prediction::default()))).unwrap();
        assert_eq!((oracle.accuracy, oracle.mean_iou), (1.0, 1.0));
        let empty = evaluate_with(&entries, &scenes, true, |_, _, _| Ok((None, Prediction::default()))).unwrap();
        assert_eq!((empty.accuracy, empty.mean_iou), (0.0, 0.0));
        // no instances extracted: both modes predict nothing
        for filter in [true, false] {
            let r = evaluate(&entries, &scenes, &RelsegOptions { filter, ..Default::default() }).unwrap();
            assert_eq!(r.accuracy, 0.0);
        }
        let missing = vec![BenchEntry {
            scene: "nope".into(),
            ..entries[0].clone()
        }];
        assert!(evaluate(&missing, &scenes, &RelsegOptions::default()).is_err());
    }
}
