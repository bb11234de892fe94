//! JSON-over-HTTP query service over one immutable checkpoint.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use axum::body::Bytes;
use axum::extract::{RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Dataset, EmbeddingTable};
use crate::error::{Error, Result};
use crate::field::{load_checkpoint, RadianceField};
use crate::graph::{extract_graph, sample_points, GraphOptions, GraphVocab, PointSource, SamplingOptions, SceneGraph};
use crate::io;
use crate::query::{click_to_query, query_object, query_relation, Direction, Domain, QueryOptions, QueryResult, QueryVector, RelevancyConfig};
use crate::render::{render_frame, Camera, Heads, RenderOptions};

pub const API_VERSION: u32 = 1;
pub const DEFAULT_CACHE_SIZE: usize = 64;
pub const RENDER_HEADS: [&str; 5] = ["rgb", "depth", "opacity", "semantic", "instance"];

/// Everything a request may read. Never mutated after construction except the cache and the lazily built graph.
pub struct ServeState {
    pub field: RadianceField,
    pub cameras: Vec<Camera>,
    pub object_vocab: EmbeddingTable,
    pub relation_vocab: EmbeddingTable,
    pub canon: RelevancyConfig,
    pub query: QueryOptions,
    pub graph_options: GraphOptions,
    cache: Mutex<IndexMap<(u32, String), Arc<Value>>>,
    cache_size: usize,
    graph: OnceLock<std::result::Result<Arc<SceneGraph>, String>>,
}

impl ServeState {
    pub fn new(field: RadianceField, ds: &Dataset) -> Result<Self> {
        Ok(Self {
            canon: RelevancyConfig::canonical(&ds.relation_vocab)?,
            field,
            cameras: ds.cameras.clone(),
            object_vocab: ds.object_vocab.clone(),
            relation_vocab: ds.relation_vocab.clone(),
            query: QueryOptions::default(),
            graph_options: GraphOptions::default(),
            cache: Mutex::new(IndexMap::new()),
            cache_size: DEFAULT_CACHE_SIZE,
            graph: OnceLock::new(),
        })
    }

    pub fn load(checkpoint: &Path, dataset: &Path) -> Result<Self> {
        let ds = Dataset::load(dataset)?;
        Self::new(load_checkpoint(checkpoint)?, &ds)
    }

    pub fn with_cache_size(mut self, n: usize) -> Self {
        self.cache_size = n.max(1);
        self
    }

    /// Uses a previously extracted graph instead of extracting on first request.
    pub fn with_graph(self, graph: SceneGraph) -> Self {
        let _ = self.graph.set(Ok(Arc::new(graph)));
        self
    }

    pub fn cached_frames(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn camera(&self, id: u32) -> std::result::Result<&Camera, ApiError> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| ApiError::bad_request(format!("unknown camera_id {id}; cameras: {}", self.cameras.iter().map(|c| c.id.to_string()).collect::<Vec<_>>().join(", "))))
    }

    pub fn meta(&self) -> Value {
        json!({
            "api_version": API_VERSION,
            "cameras": self.cameras.iter().map(|c| c.to_record()).collect::<Vec<_>>(),
            "vocabulary": {
                "objects": self.object_vocab.phrases,
                "relations": self.relation_vocab.phrases,
            },
            "dims": {
                "semantic": self.field.semantic.channels,
                "instance": self.field.instance.channels,
                "relation": self.field.fusion.output,
            },
            "heads": RENDER_HEADS,
            "directions": ["subj", "obj"],
        })
    }

    pub fn render(&self, camera_id: u32, head: &str) -> std::result::Result<Arc<Value>, ApiError> {
        if !RENDER_HEADS.contains(&head) {
            return Err(ApiError::bad_request(format!("unknown head '{head}'; heads: {}", RENDER_HEADS.join(", "))));
        }
        let key = (camera_id, head.to_string());
        {
            let mut cache = self.cache.lock().unwrap();
            if let Some(v) = cache.shift_remove(&key) {
                cache.insert(key, v.clone());
                return Ok(v);
            }
        }
        let cam = self.camera(camera_id)?;
        let (w, h) = (cam.width, cam.height);
        let heads = match head {
            "rgb" => Heads::COLOR,
            "depth" => Heads { depth: true, ..Default::default() },
            "semantic" => Heads { semantic: true, ..Default::default() },
            "instance" => Heads { instance: true, ..Default::default() },
            _ => Heads::default(),
        };
        let opts = RenderOptions {
            samples: self.query.samples,
            hit_threshold: self.query.hit_threshold,
            ..Default::default()
        };
        let f = render_frame(&self.field, cam, heads, &opts)?;
        let hit = |i: usize| f.opacity[i] >= opts.hit_threshold;
        let mut extra = json!({});
        let rgb: Vec<u8> = match head {
            "rgb" => f.color.as_ref().unwrap().iter().flat_map(|c| c.map(io::to_u8)).collect(),
            "opacity" => f.opacity.iter().flat_map(|&o| [io::to_u8(o); 3]).collect(),
            "depth" => {
                let d = f.depth.as_ref().unwrap();
                let (lo, hi) = d.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                extra = json!({ "depth_range": if lo.is_finite() { vec![lo, hi] } else { vec![] } });
                d.iter()
                    .flat_map(|x| match x {
                        Some(x) if hi > lo => [io::to_u8(1.0 - 0.8 * (x - lo) / (hi - lo)); 3],
                        Some(_) => [255; 3],
                        None => [0; 3],
                    })
                    .collect()
            }
            "semantic" => {
                let sem = f.semantic.as_ref().unwrap();
                let dim = self.field.semantic.channels;
                let labels: Vec<Vec<f64>> = (0..self.object_vocab.len()).map(|i| self.object_vocab.row_f64(i)).collect();
                extra = json!({ "legend": self.object_vocab.phrases.iter().enumerate().map(|(i, p)| json!({"label": p, "color": palette(i)})).collect::<Vec<_>>() });
                (0..w * h)
                    .flat_map(|i| {
                        if !hit(i) {
                            return [0; 3];
                        }
                        let e = &sem[i * dim..(i + 1) * dim];
                        let best = (0..labels.len()).max_by(|&a, &b| crate::math::cosine(e, &labels[a]).total_cmp(&crate::math::cosine(e, &labels[b]))).unwrap_or(0);
                        palette(best)
                    })
                    .collect()
            }
            "instance" => {
                let inst = f.instance.as_ref().unwrap();
                let dim = self.field.instance.channels;
                (0..w * h)
                    .flat_map(|i| {
                        if !hit(i) {
                            return [0; 3];
                        }
                        let e = &inst[i * dim..(i + 1) * dim];
                        std::array::from_fn(|c| io::to_u8(0.5 + 0.5 * e.get(c).copied().unwrap_or(0.0).tanh()))
                    })
                    .collect()
            }
            _ => unreachable!(),
        };
        let mut v = json!({
            "api_version": API_VERSION,
            "camera_id": camera_id,
            "head": head,
            "width": w,
            "height": h,
            "png": png_base64(w, h, &rgb)?,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
            m.extend(e);
        }
        let v = Arc::new(v);
        let mut cache = self.cache.lock().unwrap();
        cache.insert(key, v.clone());
        while cache.len() > self.cache_size {
            cache.shift_remove_index(0);
        }
        Ok(v)
    }

    pub fn query_object(&self, req: &ObjectQueryRequest) -> std::result::Result<Value, ApiError> {
        let q = QueryVector::from_text(&self.object_vocab, &req.text)?;
        let cam = self.camera(req.camera_id.unwrap_or_else(|| self.cameras.first().map_or(0, |c| c.id)))?;
        let r = query_object(&self.field, &q, Domain::Frame(cam), &self.query)?;
        result_json(&r, cam.id)
    }

    pub fn query_relation(&self, req: &RelationQueryRequest) -> std::result::Result<Value, ApiError> {
        let direction: Direction = req.direction.as_deref().unwrap_or("subj").parse()?;
        let q = QueryVector::from_text(&self.relation_vocab, &req.text)?;
        let cam = self.camera(req.camera_id)?;
        let [u, v] = req.pixel;
        if u < 0 || v < 0 || u as usize >= cam.width || v as usize >= cam.height {
            return Err(Error::PixelOutOfImage {
                u,
                v,
                width: cam.width,
                height: cam.height,
            }
            .into());
        }
        let click = click_to_query(&self.field, cam, [u as usize, v as usize], &self.query)?;
        let r = query_relation(&self.field, &click, &q, &self.canon, Domain::Frame(cam), direction, &self.query)?;
        result_json(&r, cam.id)
    }

    pub fn graph(&self) -> std::result::Result<Arc<SceneGraph>, ApiError> {
        self.graph
            .get_or_init(|| {
                let build = || -> Result<SceneGraph> {
                    let source = PointSource::Surfaces {
                        cameras: self.cameras.iter().step_by(3).cloned().collect(),
                        stride: 2,
                    };
                    let points = sample_points(&self.field, &source, &SamplingOptions::default())?;
                    let vocab = GraphVocab::new(&self.object_vocab, &self.relation_vocab)?;
                    extract_graph(&self.field, &points, &vocab, &self.graph_options)
                };
                build().map(Arc::new).map_err(|e| e.to_string())
            })
            .clone()
            .map_err(ApiError::internal)
    }

    pub fn graph_json(&self, k: usize) -> std::result::Result<Value, ApiError> {
        if k == 0 {
            return Err(ApiError::bad_request("k must be at least 1"));
        }
        let g = self.graph()?;
        Ok(json!({
            "api_version": API_VERSION,
            "k": k,
            "nodes": g.nodes.iter().map(|n| json!({
                "id": n.id,
                "centroid": n.centroid,
                "n_points": n.members.len(),
                "labels": &n.labels[..k.min(n.labels.len())],
            })).collect::<Vec<_>>(),
            "edges": g.edges.iter().map(|e| json!({
                "subject": e.subject,
                "object": e.object,
                "rho": e.rho,
                "predicates": &e.predicates[..k.min(e.predicates.len())],
            })).collect::<Vec<_>>(),
        }))
    }
}

fn palette(i: usize) -> [u8; 3] {
    const P: [[u8; 3]; 8] = [[90, 90, 90], [228, 26, 28], [55, 126, 184], [77, 175, 74], [255, 127, 0], [152, 78, 163], [255, 255, 51], [166, 86, 40]];
    P[i % P.len()]
}

fn png_base64(w: usize, h: usize, rgb: &[u8]) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(io::encode_rgb8(w, h, rgb)?))
}

fn result_json(r: &QueryResult, camera_id: u32) -> std::result::Result<Value, ApiError> {
    Ok(json!({
        "api_version": API_VERSION,
        "text": r.text,
        "camera_id": camera_id,
        "direction": r.direction,
        "click": r.click.as_ref().map(|c| json!({
            "pixel": c.pixel,
            "depth": c.depth,
            "point": c.point.map(|p| [p.x, p.y, p.z]),
        })),
        "no_hit": r.no_hit,
        "width": r.width,
        "height": r.height,
        "stats": r.stats(),
        "scores": r.scores.iter().map(|&s| s as f32).collect::<Vec<_>>(),
        "valid": r.valid,
        "heatmap": png_base64(r.width, r.height, &r.heatmap_rgb())?,
    }))
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub camera_id: u32,
    #[serde(default = "default_head")]
    pub head: String,
}

fn default_head() -> String {
    "rgb".into()
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectQueryRequest {
    pub text: String,
    #[serde(default)]
    pub camera_id: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationQueryRequest {
    pub camera_id: u32,
    pub pixel: [i64; 2],
    pub text: String,
    #[serde(default)]
    pub direction: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub api_version: u32,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            api_version: API_VERSION,
            error: error.into(),
            vocabulary: None,
        }
    }

    pub fn bad_request(error: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error)
    }

    fn internal(error: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, error)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match &e {
            Error::UnknownPhrase { vocabulary, .. } => Self {
                vocabulary: Some(vocabulary.clone()),
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            },
            Error::InvalidConfig(_) | Error::PixelOutOfImage { .. } | Error::OutOfBounds { .. } | Error::QueryParse { .. } => Self::bad_request(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(&self)).into_response()
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> std::result::Result<T, ApiError> + Send + 'static) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn meta(State(s): State<Arc<ServeState>>) -> axum::Json<Value> {
    axum::Json(s.meta())
}

async fn render(State(s): State<Arc<ServeState>>, body: Bytes) -> std::result::Result<axum::Json<Value>, ApiError> {
    let req: RenderRequest = parse(&body)?;
    let v = blocking(move || s.render(req.camera_id, &req.head)).await?;
    Ok(axum::Json((*v).clone()))
}

async fn object(State(s): State<Arc<ServeState>>, body: Bytes) -> std::result::Result<axum::Json<Value>, ApiError> {
    let req: ObjectQueryRequest = parse(&body)?;
    Ok(axum::Json(blocking(move || s.query_object(&req)).await?))
}

async fn relation(State(s): State<Arc<ServeState>>, body: Bytes) -> std::result::Result<axum::Json<Value>, ApiError> {
    let req: RelationQueryRequest = parse(&body)?;
    Ok(axum::Json(blocking(move || s.query_relation(&req)).await?))
}

async fn graph(State(s): State<Arc<ServeState>>, RawQuery(q): RawQuery) -> std::result::Result<axum::Json<Value>, ApiError> {
    let mut k = 5;
    for pair in q.as_deref().unwrap_or("").split('&').filter(|p| !p.is_empty()) {
        match pair.split_once('=') {
            Some(("k", v)) => k = v.parse().map_err(|_| ApiError::bad_request(format!("k must be a positive integer, got '{v}'")))?,
            _ => return Err(ApiError::bad_request(format!("unknown query parameter '{pair}'"))),
        }
    }
    Ok(axum::Json(blocking(move || s.graph_json(k)).await?))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/render", post(render))
        .route("/api/query/object", post(object))
        .route("/api/query/relation", post(relation))
        .route("/api/graph", get(graph))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until the process is stopped. Port 0 picks a free port; `ready` receives the bound address.
pub async fn serve(state: Arc<ServeState>, addr: SocketAddr, ready: impl FnOnce(SocketAddr)) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::io(addr.to_string(), e))?;
    let local = listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?;
    ready(local);
    axum::serve(listener, router(state)).await.map_err(|e| Error::io(local.to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetConfig, SceneSpec};
    use crate::field::{FieldInit, GridConfig};

    fn state() -> ServeState {
        let ds = Dataset::generate(&SceneSpec::demo(), &DatasetConfig::default(), 1).unwrap();
        let cfg = GridConfig {
            resolution: [6, 6, 6],
            feature_resolution: [5, 5, 5],
            bounds: ds.scene.as_ref().unwrap().bounds,
            ..Default::default()
        };
        ServeState::new(RadianceField::new(cfg, FieldInit::default(), 0).unwrap(), &ds).unwrap().with_cache_size(2)
    }

    #[test]
    fn render_cache_is_lru() {
        let s = state();
        let a = s.render(0, "rgb").unwrap();
        s.render(1, "rgb").unwrap();
        assert!(Arc::ptr_eq(&a, &s.render(0, "rgb").unwrap()));
        s.render(2, "opacity").unwrap();
        assert_eq!(s.cached_frames(), 2);
        // camera 1 was least recently used
        assert!(Arc::ptr_eq(&a, &s.render(0, "rgb").unwrap()));
        let keys: Vec<_> = s.cache.lock().unwrap().keys().cloned().collect();
        assert_eq!(keys, vec![(2, "opacity".to_string()), (0, "rgb".to_string())]);
    }

    #[test]
    fn error_statuses() {
        let s = state();
        assert_eq!(s.render(0, "normals").unwrap_err().status, StatusCode::BAD_REQUEST);
        assert_eq!(s.render(999, "rgb").unwrap_err().status, StatusCode::BAD_REQUEST);
        let e = s.query_object(&ObjectQueryRequest { text: "teapot".into(), camera_id: None }).unwrap_err();
        assert_eq!(e.status, StatusCode::UNPROCESSABLE_ENTITY);
        assert!(e.vocabulary.unwrap().contains(&"sphere".to_string()));
        let rel = |pixel, direction: &str| RelationQueryRequest {
            camera_id: 0,
            pixel,
            text: "supporting".into(),
            direction: Some(direction.into()),
        };
        assert_eq!(s.query_relation(&rel([-1, 0], "subj")).unwrap_err().status, StatusCode::BAD_REQUEST);
        assert_eq!(s.query_relation(&rel([0, 0], "sideways")).unwrap_err().status, StatusCode::BAD_REQUEST);
        assert!(parse::<RenderRequest>(b"{\"camera_id\": \"x\"}").is_err());
        assert_eq!(s.graph_json(0).unwrap_err().status, StatusCode::BAD_REQUEST);
    }

    #[test]
    fn background_click_reports_no_hit() {
        let s = state();
        let v = s
            .query_relation(&RelationQueryRequest {
                camera_id: 0,
                pixel: [0, 0],
                text: "supporting".into(),
                direction: None,
            })
            .unwrap();
        assert_eq!(v["no_hit"], true);
        assert_eq!(v["api_version"], API_VERSION);
        assert!(v["scores"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
    }
}
