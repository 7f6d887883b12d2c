//! HTTP JSON API over a loaded [`KVectorStore`].
//!
//! | route            | purpose                                          |
//! |------------------|--------------------------------------------------|
//! | `GET /taxonomy`  | category list and taxonomy hash                  |
//! | `POST /score`    | grid or ward scores for a config                 |
//! | `GET /point`     | score, cell id and per-entry counts at a point   |
//! | `GET /geometry`  | cell squares or ward outlines as GeoJSON         |
//!
//! The store is never mutated by requests. Score responses carry the compute
//! time in the `x-compute-ms` header so that bodies stay byte-identical for
//! identical requests.

use std::future::Future;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::Instant;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderName, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use walkscope_core::geom::{LatLon, Rect};
use walkscope_core::precompute::KVectorStore;
use walkscope_core::scoring::{
    round6, Granularity, ScoreError, ScoreSurface, ScoringPlan, UserConfig,
};

pub const COMPUTE_MS_HEADER: &str = "x-compute-ms";
pub const FINGERPRINT_HEADER: &str = "x-config-fingerprint";
pub const DEFAULT_CACHE_SIZE: usize = 64;
const CONFIG_REGISTRY_SIZE: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Allowed CORS origins; empty or `*` allows any origin.
    pub cors_origins: Vec<String>,
    /// Surface memo capacity; 0 disables memoization.
    pub cache_size: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            cors_origins: Vec::new(),
            cache_size: DEFAULT_CACHE_SIZE,
        }
    }
}

type SurfaceKey = (String, Granularity);

struct Loaded {
    store: Arc<KVectorStore>,
    grid_geometry: OnceLock<Arc<String>>,
    ward_geometry: OnceLock<Arc<String>>,
}

pub struct AppState {
    loaded: RwLock<Option<Arc<Loaded>>>,
    surfaces: Option<Mutex<LruCache<SurfaceKey, Arc<ScoreSurface>>>>,
    configs: Mutex<LruCache<String, UserConfig>>,
}

impl AppState {
    pub fn new(store: Option<KVectorStore>, cache_size: usize) -> Arc<Self> {
        let state = Arc::new(Self {
            loaded: RwLock::new(None),
            surfaces: NonZeroUsize::new(cache_size).map(|n| Mutex::new(LruCache::new(n))),
            configs: Mutex::new(LruCache::new(
                NonZeroUsize::new(CONFIG_REGISTRY_SIZE).expect("nonzero"),
            )),
        });
        if let Some(s) = store {
            state.install_store(s);
        }
        state
    }

    /// Replaces the served store and drops memoized surfaces.
    pub fn install_store(&self, store: KVectorStore) {
        let loaded = Loaded {
            store: Arc::new(store),
            grid_geometry: OnceLock::new(),
            ward_geometry: OnceLock::new(),
        };
        *self.loaded.write().expect("lock") = Some(Arc::new(loaded));
        if let Some(c) = &self.surfaces {
            c.lock().expect("lock").clear();
        }
    }

    fn loaded(&self) -> Result<Arc<Loaded>, ApiError> {
        self.loaded
            .read()
            .expect("lock")
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no store loaded"))
    }

    fn remember(&self, config: &UserConfig) {
        self.configs
            .lock()
            .expect("lock")
            .put(config.fingerprint(), config.clone());
    }

    fn surface(
        &self,
        store: &KVectorStore,
        plan: &ScoringPlan,
        granularity: Granularity,
    ) -> Result<Arc<ScoreSurface>, ScoreError> {
        let key = (plan.fingerprint().to_owned(), granularity);
        if let Some(c) = &self.surfaces {
            if let Some(s) = c.lock().expect("lock").get(&key) {
                return Ok(s.clone());
            }
        }
        let surface = Arc::new(match granularity {
            Granularity::Grid => plan.grid_surface(store)?,
            Granularity::Ward => plan.ward_surface(store)?,
        });
        if let Some(c) = &self.surfaces {
            c.lock().expect("lock").put(key, surface.clone());
        }
        Ok(surface)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn field(status: StatusCode, field: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": "invalid request", "issues": [{ "field": field, "message": message.into() }] }),
        }
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::InvalidConfig(issues) => Self {
                status: StatusCode::BAD_REQUEST,
                body: json!({ "error": "invalid config", "issues": issues }),
            },
            ScoreError::TaxonomyMismatch { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            ScoreError::OutOfBounds { .. } => Self::new(StatusCode::NOT_FOUND, e.to_string()),
            ScoreError::UnknownCategory { .. } => Self::new(StatusCode::BAD_REQUEST, e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: Arc<AppState>, config: &ServiceConfig) -> Router {
    Router::new()
        .route("/taxonomy", get(taxonomy))
        .route("/score", post(score))
        .route("/point", get(point))
        .route("/geometry", get(geometry))
        .layer(middleware::from_fn(log_request))
        .layer(cors(&config.cors_origins))
        .with_state(state)
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() || origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([
            HeaderName::from_static(COMPUTE_MS_HEADER),
            HeaderName::from_static(FINGERPRINT_HEADER),
        ])
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let route = req.uri().path().to_owned();
    let start = Instant::now();
    let resp = next.run(req).await;
    let fingerprint = resp
        .headers()
        .get(FINGERPRINT_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("-")
        .to_owned();
    tracing::info!(%method, %route, status = resp.status().as_u16(), %fingerprint, ms = start.elapsed().as_secs_f64() * 1e3, "request");
    resp
}

/// Binds nothing itself: serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

async fn taxonomy(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let loaded = state.loaded()?;
    let t = loaded.store.taxonomy();
    Ok(
        Json(
            json!({ "taxonomy_hash": loaded.store.taxonomy_hash(), "categories": t.categories() }),
        )
        .into_response(),
    )
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub config: Value,
    #[serde(default)]
    pub granularity: Granularity,
    /// `[min_lon, min_lat, max_lon, max_lat]`.
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
    /// When present, must equal the store's taxonomy hash.
    #[serde(default)]
    pub taxonomy_hash: Option<String>,
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    #[serde(flatten)]
    surface: &'a ScoreSurface,
    taxonomy_hash: &'a str,
}

fn projected_bbox(store: &KVectorStore, b: [f64; 4]) -> Result<Rect, ApiError> {
    let [min_lon, min_lat, max_lon, max_lat] = b;
    let bad = |m: &str| ApiError::field(StatusCode::BAD_REQUEST, "bbox", m);
    let lo = LatLon::new(min_lat, min_lon).map_err(|e| bad(&e.to_string()))?;
    let hi = LatLon::new(max_lat, max_lon).map_err(|e| bad(&e.to_string()))?;
    if !(min_lon <= max_lon && min_lat <= max_lat) {
        return Err(bad("expected [min_lon, min_lat, max_lon, max_lat]"));
    }
    let (a, c) = (
        store.projection().forward(lo),
        store.projection().forward(hi),
    );
    let r = Rect::new(a.x, a.y, c.x, c.y);
    if !r.intersects(&store.grid().bounds()) {
        return Err(bad("does not intersect the grid"));
    }
    Ok(r)
}

async fn score(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ScoreRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let loaded = state.loaded()?;
    let Json(req) =
        body.map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, "$", e.body_text()))?;
    let store = loaded.store.clone();
    if let Some(h) = &req.taxonomy_hash {
        if h != store.taxonomy_hash() {
            return Err(ScoreError::TaxonomyMismatch {
                expected: h.clone(),
                found: store.taxonomy_hash().to_owned(),
            }
            .into());
        }
    }
    let config = UserConfig::from_value(req.config)?;
    let bbox = req.bbox.map(|b| projected_bbox(&store, b)).transpose()?;
    let start = Instant::now();
    let st = state.clone();
    let store2 = store.clone();
    let surface = tokio::task::spawn_blocking(move || -> Result<ScoreSurface, ScoreError> {
        let plan = ScoringPlan::compile(&config, store2.taxonomy())?;
        st.remember(&config);
        let full = st.surface(&store2, &plan, req.granularity)?;
        Ok(match bbox {
            None => (*full).clone(),
            Some(r) => {
                let mut s = (*full).clone();
                match req.granularity {
                    Granularity::Grid => {
                        let spec = store2.grid();
                        s.retain(|id| {
                            id.parse::<usize>()
                                .is_ok_and(|i| spec.cell_rect(i).intersects(&r))
                        });
                    }
                    Granularity::Ward => {
                        let keep: Vec<&str> = store2
                            .wards()
                            .iter()
                            .filter(|w| w.shape.bbox().intersects(&r))
                            .map(|w| w.id.0.as_str())
                            .collect();
                        s.retain(|id| keep.binary_search(&id).is_ok());
                    }
                }
                s
            }
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let body = serde_json::to_vec(&ScoreBody {
        surface: &surface,
        taxonomy_hash: store.taxonomy_hash(),
    })
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((
        [
            (
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/json"),
            ),
            (
                HeaderName::from_static(COMPUTE_MS_HEADER),
                HeaderValue::from_str(&format!("{ms:.3}")).expect("ascii"),
            ),
            (
                HeaderName::from_static(FINGERPRINT_HEADER),
                HeaderValue::from_str(&surface.fingerprint).expect("hex"),
            ),
        ],
        body,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
pub struct PointQuery {
    pub lat: f64,
    pub lon: f64,
    /// URL-encoded config JSON.
    pub config: Option<String>,
    /// Fingerprint of a config seen in an earlier request.
    pub fingerprint: Option<String>,
}

async fn point(
    State(state): State<Arc<AppState>>,
    q: Result<Query<PointQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let loaded = state.loaded()?;
    let Query(q) =
        q.map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, "query", e.body_text()))?;
    let config = match (&q.config, &q.fingerprint) {
        (Some(c), _) => UserConfig::from_json(c)?,
        (None, Some(fp)) => state
            .configs
            .lock()
            .expect("lock")
            .get(fp)
            .cloned()
            .ok_or_else(|| {
                ApiError::field(
                    StatusCode::BAD_REQUEST,
                    "fingerprint",
                    "unknown config fingerprint",
                )
            })?,
        (None, None) => {
            return Err(ApiError::field(
                StatusCode::BAD_REQUEST,
                "config",
                "either config or fingerprint is required",
            ))
        }
    };
    let location = LatLon::new(q.lat, q.lon)
        .map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, "lat/lon", e.to_string()))?;
    let store = &loaded.store;
    let plan = ScoringPlan::compile(&config, store.taxonomy())?;
    state.remember(&config);
    let p = walkscope_core::scoring::point_score_with(&plan, location, store)?;
    let entries: Vec<Value> = config
        .entries
        .iter()
        .zip(&p.entry_k)
        .map(|(e, k)| json!({ "members": e.members, "label": e.label, "tier": e.tier, "decay": e.decay, "k": k }))
        .collect();
    let gated: Vec<usize> = config
        .entries
        .iter()
        .zip(&p.entry_k)
        .enumerate()
        .filter(|(_, (e, k))| e.tier.is_gate() && **k == 0)
        .map(|(i, _)| i)
        .collect();
    let body = json!({
        "cell_id": p.cell.to_string(),
        "ward_id": p.ward,
        "score": round6(p.score),
        "k": p.entry_k,
        "entries": entries,
        "gated_by": gated,
        "fingerprint": plan.fingerprint(),
    });
    Ok((
        [(
            HeaderName::from_static(FINGERPRINT_HEADER),
            HeaderValue::from_str(plan.fingerprint()).expect("hex"),
        )],
        Json(body),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
pub struct GeometryQuery {
    #[serde(default)]
    pub granularity: Granularity,
}

fn grid_geometry(store: &KVectorStore) -> String {
    let features: Vec<Value> = (0..store.n_cells())
        .map(|i| {
            json!({
                "type": "Feature",
                "id": i.to_string(),
                "properties": { "ward_id": store.ward_of(i) },
                "geometry": { "type": "Polygon", "coordinates": [store.cell_ring_lonlat(i)] },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features }).to_string()
}

fn ward_geometry(store: &KVectorStore) -> String {
    let features: Vec<Value> = store
        .populated_wards()
        .into_iter()
        .map(|w| {
            let id = &store.wards()[w].id;
            json!({
                "type": "Feature",
                "id": id,
                "properties": { "ward_id": id },
                "geometry": { "type": "Polygon", "coordinates": store.ward_rings_lonlat(w) },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features }).to_string()
}

async fn geometry(
    State(state): State<Arc<AppState>>,
    q: Result<Query<GeometryQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let loaded = state.loaded()?;
    let Query(q) =
        q.map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, "granularity", e.body_text()))?;
    let l = loaded.clone();
    let body = tokio::task::spawn_blocking(move || match q.granularity {
        Granularity::Grid => l
            .grid_geometry
            .get_or_init(|| Arc::new(grid_geometry(&l.store)))
            .clone(),
        Granularity::Ward => l
            .ward_geometry
            .get_or_init(|| Arc::new(ward_geometry(&l.store)))
            .clone(),
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/geo+json"),
        )],
        (*body).clone(),
    )
        .into_response())
}
