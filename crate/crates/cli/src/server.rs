//! JSON-over-HTTP access to a trained classifier and L-GMVAE.
//!
//! All feature values in requests and responses are in raw units. Every
//! route answers 503 until [`AppState::install`] has been called.

use std::collections::{BTreeMap, HashMap};
use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lapace_core::artifact::{self, ClassifierArtifact, LgmvaeArtifact};
use lapace_core::classifiers::{AnyClassifier, Classifier};
use lapace_core::data::{FeatureKind, RawValue, TabularSchema};
use lapace_core::lapace::{
    generate_constrained_paths, generate_paths, select_points, Constraint, ConstraintSet, LatentPath, SelectedPoint,
    TauGrid, DEFAULT_STEPS,
};
use lapace_core::lgmvae::LgmvaeModel;
use lapace_core::pipeline::{raw_point, same_schema, RawPoint};
use lapace_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Upper bound on the number of grid points a request may ask for.
pub const MAX_GRID_STEPS: usize = 1001;

/// Immutable artifacts behind the service.
pub struct Artifacts {
    pub model: LgmvaeModel,
    pub classifier: AnyClassifier,
}

impl Artifacts {
    /// Checks that the pair shares a schema and that the model is
    /// recourse-ready.
    pub fn new(model: LgmvaeArtifact, classifier: ClassifierArtifact) -> lapace_core::Result<Self> {
        same_schema(&model.model.schema, &classifier.schema)?;
        if !model.model.recourse_ready {
            return Err(Error::NotRecourseReady(format!(
                "failing centroids {:?}",
                model.centroid_check.failing
            )));
        }
        Ok(Self {
            model: model.model,
            classifier: classifier.classifier,
        })
    }

    fn schema(&self) -> &TabularSchema {
        &self.model.schema
    }
}

/// Shared handle; empty until artifacts are installed.
#[derive(Clone, Default)]
pub struct AppState {
    slot: Arc<OnceLock<Artifacts>>,
}

impl AppState {
    pub fn ready(artifacts: Artifacts) -> Self {
        let state = Self::default();
        state.install(artifacts);
        state
    }

    /// Installs the artifacts; later calls are ignored.
    pub fn install(&self, artifacts: Artifacts) {
        let _ = self.slot.set(artifacts);
    }

    fn artifacts(&self) -> Result<&Artifacts, ApiError> {
        self.slot
            .get()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "artifacts are still loading"))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/centroids", get(centroids))
        .route("/encode", post(encode))
        .route("/classify", post(classify))
        .route("/paths", post(paths))
        .route("/constrained-paths", post(constrained_paths))
        .with_state(state)
}

/// Binds first, then loads the artifacts in the background so that early
/// requests get 503 rather than a refused connection.
pub fn serve(model: PathBuf, classifier: PathBuf, bind: SocketAddr) -> Result<(), Failure> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::usage(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Failure::usage(format!("cannot bind {bind}: {e}")))?;
        let state = AppState::default();
        let loader = state.clone();
        let load = tokio::task::spawn_blocking(move || -> Result<(), Failure> {
            let m: LgmvaeArtifact = artifact::load(&model)?;
            let c: ClassifierArtifact = artifact::load(&classifier)?;
            loader.install(Artifacts::new(m, c)?);
            Ok(())
        });
        eprintln!("listening on {}", listener.local_addr().map_err(|e| Failure::usage(e.to_string()))?);
        let server = tokio::spawn(axum::serve(listener, router(state)).into_future());
        load.await.map_err(|e| Failure::usage(e.to_string()))??;
        eprintln!("artifacts loaded");
        server
            .await
            .map_err(|e| Failure::usage(e.to_string()))?
            .map_err(|e| Failure::usage(e.to_string()))
    })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn bad(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.into()),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Schema(_) | Error::Shape(_) | Error::Invalid(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::Infeasible(_) | Error::NoFlip { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::NotRecourseReady(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: &self.message,
            field: self.field.as_deref(),
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad("body", e.to_string()))
}

/// Features by name, or as a list in schema order.
#[derive(Deserialize, Debug)]
#[serde(untagged)]
pub enum Features {
    Named(BTreeMap<String, RawValue>),
    Ordered(Vec<RawValue>),
}

fn encode_features(schema: &TabularSchema, features: &Features) -> Result<Vec<f64>, ApiError> {
    let row: Vec<RawValue> = match features {
        Features::Ordered(values) => {
            if values.len() != schema.features.len() {
                return Err(ApiError::bad(
                    "features",
                    format!("expected {} values, got {}", schema.features.len(), values.len()),
                ));
            }
            values.clone()
        }
        Features::Named(map) => {
            if let Some(k) = map.keys().find(|k| schema.feature_index(k).is_err()) {
                return Err(ApiError::bad(format!("features.{k}"), "unknown feature"));
            }
            schema
                .features
                .iter()
                .map(|f| {
                    map.get(&f.name)
                        .cloned()
                        .ok_or_else(|| ApiError::bad(format!("features.{}", f.name), "missing feature"))
                })
                .collect::<Result<_, _>>()?
        }
    };
    for (f, v) in schema.features.iter().zip(&row) {
        let field = || format!("features.{}", f.name);
        match (&f.kind, v) {
            (FeatureKind::Continuous { .. }, RawValue::Number(x)) if x.is_finite() => {}
            (FeatureKind::Continuous { .. }, _) => return Err(ApiError::bad(field(), "expected a finite number")),
            (FeatureKind::Categorical { levels }, RawValue::Level(l)) if levels.contains(l) => {}
            (FeatureKind::Categorical { levels }, _) => {
                return Err(ApiError::bad(field(), format!("expected one of {levels:?}")))
            }
        }
    }
    Ok(schema.encode_row(&row)?)
}

fn class_index(schema: &TabularSchema, field: &str, class: &str) -> Result<usize, ApiError> {
    schema
        .label_index(class)
        .map_err(|_| ApiError::bad(field, format!("unknown class {class:?}; expected one of {:?}", schema.label.classes)))
}

/// A step count or explicit tau values.
#[derive(Deserialize, Debug)]
#[serde(untagged)]
pub enum GridSpec {
    Steps(usize),
    Values(Vec<f64>),
}

fn tau_grid(spec: Option<&GridSpec>) -> Result<TauGrid, ApiError> {
    let grid = match spec {
        None => TauGrid::uniform(DEFAULT_STEPS),
        Some(GridSpec::Steps(n)) if *n > MAX_GRID_STEPS => {
            return Err(ApiError::bad("grid", format!("at most {MAX_GRID_STEPS} steps")))
        }
        Some(GridSpec::Steps(n)) => TauGrid::uniform(*n),
        Some(GridSpec::Values(v)) if v.len() > MAX_GRID_STEPS => {
            return Err(ApiError::bad("grid", format!("at most {MAX_GRID_STEPS} values")))
        }
        Some(GridSpec::Values(v)) => TauGrid::new(v.clone()),
    };
    grid.map_err(|e| ApiError::bad("grid", e.to_string()))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn health(State(state): State<AppState>) -> Response {
    match state.artifacts() {
        Ok(_) => Json(Health { status: "ready" }).into_response(),
        Err(_) => (StatusCode::SERVICE_UNAVAILABLE, Json(Health { status: "loading" })).into_response(),
    }
}

async fn schema(State(state): State<AppState>) -> ApiResult<TabularSchema> {
    Ok(Json(state.artifacts()?.schema().clone()))
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct CentroidView {
    pub cluster: usize,
    pub features: RawPoint,
    /// Classifier verdict on the decoded centroid.
    pub label: String,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct CentroidsResponse {
    pub label: String,
    pub centroids: Vec<CentroidView>,
}

async fn centroids(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<CentroidsResponse> {
    let a = state.artifacts()?;
    let schema = a.schema();
    let class = q.get("label").ok_or_else(|| ApiError::bad("label", "query parameter required"))?;
    let y = class_index(schema, "label", class)?;
    let centroids = a
        .model
        .centroids(y)?
        .into_iter()
        .map(|c| {
            Ok(CentroidView {
                cluster: c.cluster,
                label: schema.label.classes[a.classifier.predict(&c.decoded)].clone(),
                features: raw_point(schema, &c.decoded)?,
            })
        })
        .collect::<Result<_, Error>>()?;
    Ok(Json(CentroidsResponse {
        label: class.clone(),
        centroids,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesRequest {
    features: Features,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct ClassifyResponse {
    pub label: String,
    /// Per-class probabilities, when the classifier has them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<BTreeMap<String, f64>>,
}

async fn classify(State(state): State<AppState>, body: Bytes) -> ApiResult<ClassifyResponse> {
    let a = state.artifacts()?;
    let req: FeaturesRequest = parse(&body)?;
    let x = encode_features(a.schema(), &req.features)?;
    let classes = &a.schema().label.classes;
    Ok(Json(ClassifyResponse {
        label: classes[a.classifier.predict(&x)].clone(),
        probabilities: a
            .classifier
            .predict_proba(&x)
            .map(|p| classes.iter().cloned().zip(p).collect()),
    }))
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct EncodeResponse {
    /// The classifier's label, which conditions the encoder.
    pub label: String,
    pub latent: Vec<f64>,
    /// Cluster responsibilities, keyed by cluster id; zero outside the
    /// label's clusters.
    pub clusters: Vec<f64>,
}

async fn encode(State(state): State<AppState>, body: Bytes) -> ApiResult<EncodeResponse> {
    let a = state.artifacts()?;
    let req: FeaturesRequest = parse(&body)?;
    let x = encode_features(a.schema(), &req.features)?;
    let y = a.classifier.predict(&x);
    Ok(Json(EncodeResponse {
        label: a.schema().label.classes[y].clone(),
        latent: a.model.encode(&x, y)?,
        clusters: a.model.encode_cluster(&x, y)?,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsRequest {
    features: Features,
    /// Class name; defaults to the class after the predicted one.
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    grid: Option<GridSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstrainedPathsRequest {
    features: Features,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    grid: Option<GridSpec>,
    constraints: Vec<Constraint>,
    #[serde(default)]
    learning_rate: Option<f64>,
    #[serde(default)]
    max_iterations: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct EntryView {
    pub tau: f64,
    pub features: RawPoint,
    pub label: String,
    pub corrections: usize,
    pub satisfied: bool,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct PointView {
    pub tau: f64,
    pub features: RawPoint,
    pub label: String,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct SelectionView {
    pub first: PointView,
    pub middle: PointView,
    pub last: PointView,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct PathView {
    pub cluster: usize,
    /// Set when the last entry does not reach the target.
    pub flagged: bool,
    pub entries: Vec<EntryView>,
    /// Absent when no entry reaches the target.
    pub selection: Option<SelectionView>,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct PathsResponse {
    pub input: RawPoint,
    pub label: String,
    pub target: String,
    pub grid: Vec<f64>,
    pub paths: Vec<PathView>,
    /// The request's constraint terms, echoed unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Vec<Constraint>>,
}

struct Prepared {
    x: Vec<f64>,
    label: usize,
    target: usize,
    grid: TauGrid,
}

fn prepare(a: &Artifacts, features: &Features, target: Option<&str>, grid: Option<&GridSpec>) -> Result<Prepared, ApiError> {
    let schema = a.schema();
    let x = encode_features(schema, features)?;
    let label = a.classifier.predict(&x);
    let target = match target {
        Some(t) => class_index(schema, "target", t)?,
        None => (label + 1) % schema.n_classes(),
    };
    if target == label {
        return Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: format!("input is already classified as {:?}", schema.label.classes[label]),
            field: Some("target".into()),
        });
    }
    Ok(Prepared {
        x,
        label,
        target,
        grid: tau_grid(grid)?,
    })
}

fn render(a: &Artifacts, p: &Prepared, paths: &[LatentPath], constraints: Option<Vec<Constraint>>) -> Result<PathsResponse, Error> {
    let schema = a.schema();
    let class = |y: usize| schema.label.classes[y].clone();
    let point = |s: &SelectedPoint| -> Result<PointView, Error> {
        Ok(PointView {
            tau: s.tau,
            features: raw_point(schema, &s.decoded)?,
            label: class(s.label),
        })
    };
    let mut views = Vec::with_capacity(paths.len());
    for path in paths {
        let selection = match select_points(&a.model, &a.classifier, path, p.target) {
            Ok(s) => Some(SelectionView {
                first: point(&s.first)?,
                middle: point(&s.middle)?,
                last: point(&s.last)?,
            }),
            Err(Error::NoFlip { .. }) => None,
            Err(e) => return Err(e),
        };
        views.push(PathView {
            cluster: path.cluster,
            flagged: path.flagged,
            entries: path
                .entries
                .iter()
                .map(|e| {
                    Ok(EntryView {
                        tau: e.tau,
                        features: raw_point(schema, &e.decoded)?,
                        label: class(e.label),
                        corrections: e.corrections,
                        satisfied: e.satisfied,
                    })
                })
                .collect::<Result<_, Error>>()?,
            selection,
        });
    }
    Ok(PathsResponse {
        input: raw_point(schema, &p.x)?,
        label: class(p.label),
        target: class(p.target),
        grid: p.grid.values().to_vec(),
        paths: views,
        constraints,
    })
}

/// Runs CPU-heavy path work off the async workers.
async fn blocking<T: Send + 'static>(
    state: AppState,
    work: impl FnOnce(&Artifacts) -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || work(state.artifacts()?))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

async fn paths(State(state): State<AppState>, body: Bytes) -> ApiResult<PathsResponse> {
    state.artifacts()?;
    let req: PathsRequest = parse(&body)?;
    blocking(state, move |a| {
        let p = prepare(a, &req.features, req.target.as_deref(), req.grid.as_ref())?;
        let paths = generate_paths(&a.model, &a.classifier, &p.x, p.label, p.target, &p.grid)?;
        Ok(render(a, &p, &paths, None)?)
    })
    .await
}

async fn constrained_paths(State(state): State<AppState>, body: Bytes) -> ApiResult<PathsResponse> {
    state.artifacts()?;
    let req: ConstrainedPathsRequest = parse(&body)?;
    blocking(state, move |a| {
        let p = prepare(a, &req.features, req.target.as_deref(), req.grid.as_ref())?;
        let defaults = ConstraintSet::default();
        let set = ConstraintSet {
            terms: req.constraints.clone(),
            learning_rate: req.learning_rate.unwrap_or(defaults.learning_rate),
            max_iterations: req.max_iterations.unwrap_or(defaults.max_iterations),
        };
        set.validate().map_err(|e| ApiError::bad("constraints", e.to_string()))?;
        if let Some(i) = set.terms.iter().position(|t| !t.is_feasible()) {
            return Err(ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                message: "minimum exceeds maximum".into(),
                field: Some(format!("constraints[{i}]")),
            });
        }
        set.compile(a.schema()).map_err(|e| ApiError::bad("constraints", e.to_string()))?;
        let paths = generate_constrained_paths(&a.model, &a.classifier, &p.x, p.label, p.target, &p.grid, &set)?;
        Ok(render(a, &p, &paths, Some(req.constraints))?)
    })
    .await
}
