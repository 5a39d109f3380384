//! HTTP service for interactive model debugging.
//!
//! The model and test activations are immutable and shared by every request.
//! Each session owns a map from test row to the interventions applied to it;
//! a session is locked only while one of its requests reads or edits it.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use csm_core::annotator::ActivationMatrix;
use csm_core::evaluation::{check_compatible, core_activations};
use csm_core::explain::{explain, intervene, misclassified_rows, Intervention};
use csm_core::fine::{predict, ConceptModel};
use csm_core::{ConceptLibrary, ImageSet};

use crate::args::ServeArgs;
use crate::commands::{load_concepts, load_images, load_model};
use crate::views::{explanation_view, ExplanationView};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_LIMIT: usize = 100;

type Edits = BTreeMap<usize, f64>;

#[derive(Default)]
struct Session {
    /// Test row -> (core position -> raw value).
    edits: HashMap<usize, Edits>,
}

pub struct AppState {
    model: ConceptModel,
    acts: ActivationMatrix,
    labels: Option<Vec<usize>>,
    ids: Vec<String>,
    rows_by_id: HashMap<String, usize>,
    predictions: Vec<usize>,
    image_urls: Vec<Option<String>>,
    static_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
}

impl AppState {
    /// Annotates `test` with the model's core concepts. Refuses models whose
    /// class count, core size or concept names disagree with the bundles.
    pub fn new(
        model: ConceptModel,
        concepts: &ConceptLibrary,
        test: &ImageSet,
        static_dir: Option<PathBuf>,
    ) -> anyhow::Result<Self> {
        check_compatible(&model, test)?;
        if model.n_star() != model.concept_names.len() || model.n_star() != model.display.means.len() {
            bail!("model core size is inconsistent");
        }
        for (pos, &idx) in model.core_indices.iter().enumerate() {
            if idx >= concepts.len() {
                bail!(
                    "core concept {idx} is outside the {}-concept library",
                    concepts.len()
                );
            }
            if concepts.name(idx) != model.concept_names[pos] {
                bail!(
                    "core concept {idx} is {:?} in the model but {:?} in the library",
                    model.concept_names[pos],
                    concepts.name(idx)
                );
            }
        }
        let acts = core_activations(&model, test, concepts)?;
        let (predictions, _) = predict(&model, acts.values())?;
        let ids = test.ids().to_vec();
        let rows_by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let image_urls = ids
            .iter()
            .map(|id| static_dir.as_deref().and_then(|d| image_url(d, id)))
            .collect();
        Ok(Self {
            model,
            acts,
            labels: test.labels().map(<[usize]>::to_vec),
            ids,
            rows_by_id,
            predictions,
            image_urls,
            static_dir,
            sessions: RwLock::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        })
    }

    /// Explicit `k` as given; otherwise [`DEFAULT_K`] capped at the core size.
    fn k_or_default(&self, k: Option<usize>) -> usize {
        k.unwrap_or(DEFAULT_K.min(self.model.n_star()))
    }

    pub fn model(&self) -> &ConceptModel {
        &self.model
    }

    fn row(&self, id: &str) -> Result<usize, ApiError> {
        self.rows_by_id
            .get(id)
            .copied()
            .ok_or_else(|| ApiError::NotFound(format!("no sample {id:?}")))
    }

    fn session(&self, token: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(token)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {token:?}")))
    }

    fn explanation(&self, row: usize, k: usize, edits: &Edits) -> Result<ExplanationView, ApiError> {
        let list: Vec<Intervention> = edits
            .iter()
            .map(|(&position, &value)| Intervention {
                image_id: self.ids[row].clone(),
                position,
                value,
            })
            .collect();
        let edited = intervene(&self.model, self.acts.row(row), &list).map_err(ApiError::bad)?;
        let label = self.labels.as_ref().map(|l| l[row]);
        let e = explain(&self.model, &edited.activations, k, &self.ids[row], label)
            .map_err(ApiError::bad)?;
        Ok(explanation_view(&self.model, &e, edits))
    }
}

/// `/images/<id>` when the static directory holds that file and the id is a
/// plain relative path.
fn image_url(static_dir: &FsPath, id: &str) -> Option<String> {
    let rel = FsPath::new(id);
    let plain = !id.is_empty()
        && !id.contains('\\')
        && rel.components().all(|c| matches!(c, Component::Normal(_)));
    (plain && static_dir.join("images").join(rel).is_file()).then(|| format!("/images/{id}"))
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
}

impl ApiError {
    fn bad(e: impl std::fmt::Display) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Only {
    #[default]
    Misclassified,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesQuery {
    #[serde(default)]
    pub only: Only,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainQuery {
    pub k: Option<usize>,
    pub session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterveneRequest {
    pub session: String,
    /// Position in the model's core concept list.
    pub concept_index: usize,
    pub value: f64,
    #[serde(default)]
    pub k: Option<usize>,
}

/// Parses and checks an intervention body.
pub fn parse_intervene_request(body: &[u8]) -> Result<InterveneRequest, ApiError> {
    let req: InterveneRequest = serde_json::from_slice(body).map_err(ApiError::bad)?;
    if !req.value.is_finite() {
        return Err(ApiError::BadRequest("value must be finite".into()));
    }
    Ok(req)
}

/// Parses the query string of a request URI into `T`.
pub fn parse_query<T: serde::de::DeserializeOwned>(uri: &Uri) -> Result<T, ApiError> {
    Query::<T>::try_from_uri(uri)
        .map(|q| q.0)
        .map_err(|e| ApiError::BadRequest(e.body_text()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleItem {
    pub id: String,
    pub true_label: Option<usize>,
    pub predicted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplesView {
    pub items: Vec<SampleItem>,
    pub total: usize,
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/session", post(create_session))
        .route("/samples", get(samples))
        .route("/samples/{id}/explanation", get(get_explanation))
        .route("/samples/{id}/intervene", post(post_intervention))
        .route("/samples/{id}/interventions", delete(reset_interventions))
        .route("/concepts", get(concepts));
    let api = match &state.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

async fn create_session(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let n = s.next_session.fetch_add(1, Ordering::Relaxed);
    let token = format!("s{n:016x}");
    s.sessions
        .write()
        .expect("session table poisoned")
        .insert(token.clone(), Arc::default());
    Json(json!({ "session_id": token }))
}

async fn samples(State(s): State<Arc<AppState>>, uri: Uri) -> Result<Json<SamplesView>, ApiError> {
    let q: SamplesQuery = parse_query(&uri)?;
    let rows: Vec<usize> = match q.only {
        Only::All => (0..s.ids.len()).collect(),
        Only::Misclassified => {
            let labels = s
                .labels
                .as_ref()
                .ok_or_else(|| ApiError::BadRequest("test bundle has no labels".into()))?;
            misclassified_rows(&s.model, &s.acts, labels, &s.ids)
                .map_err(ApiError::bad)?
                .into_iter()
                .map(|m| m.row)
                .collect()
        }
    };
    let total = rows.len();
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT);
    let items = rows
        .into_iter()
        .skip(offset)
        .take(limit)
        .map(|r| SampleItem {
            id: s.ids[r].clone(),
            true_label: s.labels.as_ref().map(|l| l[r]),
            predicted: s.predictions[r],
            image_url: s.image_urls[r].clone(),
        })
        .collect();
    Ok(Json(SamplesView { items, total }))
}

async fn get_explanation(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    uri: Uri,
) -> Result<Json<ExplanationView>, ApiError> {
    let q: ExplainQuery = parse_query(&uri)?;
    let row = s.row(&id)?;
    let k = s.k_or_default(q.k);
    let edits = match &q.session {
        Some(token) => {
            let session = s.session(token)?;
            let guard = session.lock().expect("session poisoned");
            guard.edits.get(&row).cloned().unwrap_or_default()
        }
        None => Edits::new(),
    };
    Ok(Json(s.explanation(row, k, &edits)?))
}

async fn post_intervention(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ExplanationView>, ApiError> {
    let req = parse_intervene_request(&body)?;
    let row = s.row(&id)?;
    if req.concept_index >= s.model.n_star() {
        return Err(ApiError::BadRequest(format!(
            "concept_index {} outside the {} core concepts",
            req.concept_index,
            s.model.n_star()
        )));
    }
    let k = s.k_or_default(req.k);
    let session = s.session(&req.session)?;
    let mut guard = session.lock().expect("session poisoned");
    let mut edits = guard.edits.get(&row).cloned().unwrap_or_default();
    edits.insert(req.concept_index, req.value);
    // validate before committing so a bad k leaves the session untouched
    let view = s.explanation(row, k, &edits)?;
    guard.edits.insert(row, edits);
    Ok(Json(view))
}

async fn reset_interventions(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    uri: Uri,
) -> Result<Json<ExplanationView>, ApiError> {
    let q: ExplainQuery = parse_query(&uri)?;
    let row = s.row(&id)?;
    let token = q
        .session
        .ok_or_else(|| ApiError::BadRequest("session is required".into()))?;
    let session = s.session(&token)?;
    session.lock().expect("session poisoned").edits.remove(&row);
    Ok(Json(s.explanation(row, s.k_or_default(q.k), &Edits::new())?))
}

async fn concepts(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let m = &s.model;
    Json(json!({
        "names": m.concept_names,
        "indices": m.core_indices,
        "class_names": m.class_names,
        "display_means": m.display.means,
        "display_stds": m.display.stds,
    }))
}

pub fn serve_blocking(a: &ServeArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let concepts = load_concepts(&a.concepts)?;
    let test = load_images(&a.test)?;
    let state = AppState::new(model, &concepts, &test, a.static_dir.clone())
        .context("model does not match the bundles")?;
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
