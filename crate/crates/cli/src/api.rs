// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON service over the detection library.
//!
//! Datasets, posteriors and sweeps live in an in-memory registry for the
//! lifetime of the process. Registration takes the write lock; detection
//! clones an `Arc` to the snapshot and runs on the blocking pool.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use cpd_core::bayes::{bayes_detect_full, map_to_original, DEFAULT_DISTANCE, DEFAULT_THRESHOLD};
use cpd_core::harness::{detect_bundle, SweepOptions};
use cpd_core::search::SearchError;
use cpd_core::series::read_csv;
use cpd_core::{
    detect_peaks, evaluate, fuse_user_belief, gamma_sweep, penalty_sweep, simulate, BayesConfig,
    BayesError, ChangePointSet, CostError, CostKind, CostModel, Error, MarginRule, MetricsReport,
    SearchMethod, SignalBundle, SimSpec, SweepResult,
};

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Unprocessable(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

fn is_validation(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Json(_)
            | Error::Simulation(_)
            | Error::Cost(CostError::InvalidModel(_))
            | Error::Search(
                SearchError::InvalidPenalty(_)
                    | SearchError::InvalidChangePoints(_)
                    | SearchError::Cost(CostError::InvalidModel(_))
            )
            | Error::Bayes(BayesError::InvalidParameter(_) | BayesError::LengthMismatch { .. })
    )
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if is_validation(&e) {
            ApiError::BadRequest(e.to_string())
        } else {
            ApiError::Unprocessable(e.to_string())
        }
    }
}

impl From<BayesError> for ApiError {
    fn from(e: BayesError) -> Self {
        Error::from(e).into()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Posterior {
    dataset: Option<String>,
    cp_prob: Vec<f64>,
    paa_window: usize,
    /// Length of the original series the curve was computed from.
    n: usize,
}

#[derive(Default)]
struct Registry {
    next_id: u64,
    datasets: HashMap<String, Arc<SignalBundle>>,
    posteriors: HashMap<String, Arc<Posterior>>,
    sweeps: HashMap<String, Arc<SweepResult>>,
}

impl Registry {
    fn fresh_id(&mut self, prefix: &str) -> String {
        self.next_id += 1;
        format!("{prefix}-{}", self.next_id)
    }
}

/// Shared service state.
#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<RwLock<Registry>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn read<T>(&self, f: impl FnOnce(&Registry) -> T) -> T {
        f(&self.inner.read().unwrap_or_else(|p| p.into_inner()))
    }

    fn write<T>(&self, f: impl FnOnce(&mut Registry) -> T) -> T {
        f(&mut self.inner.write().unwrap_or_else(|p| p.into_inner()))
    }

    fn dataset(&self, id: &str) -> Result<Arc<SignalBundle>, ApiError> {
        self.read(|r| r.datasets.get(id).cloned())
            .ok_or_else(|| ApiError::NotFound(format!("unknown dataset `{id}`")))
    }

    fn posterior(&self, id: &str) -> Result<Arc<Posterior>, ApiError> {
        self.read(|r| r.posteriors.get(id).cloned())
            .ok_or_else(|| ApiError::NotFound(format!("unknown posterior `{id}`")))
    }

    fn store_posterior(&self, p: Posterior) -> String {
        self.write(|r| {
            let id = r.fresh_id("posterior");
            r.posteriors.insert(id.clone(), Arc::new(p));
            id
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(create_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/detect", post(detect))
        .route("/sweep/{id}", get(get_sweep))
        .route("/bayes/posterior", post(bayes_posterior))
        .route("/bayes/peaks", post(bayes_peaks))
        .route("/posterior/fuse", post(fuse))
        .route("/annotations", post(annotate))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Unprocessable(format!("worker failed: {e}")))?
}

fn score(
    bundle: &SignalBundle,
    cps: &ChangePointSet,
    margin: Option<MarginRule>,
) -> Result<Option<MetricsReport>, ApiError> {
    let Some(truth) = &bundle.truth else {
        return Ok(None);
    };
    let m = margin.unwrap_or_default().margin(bundle.len());
    Ok(Some(
        evaluate(cps, truth, m, bundle.dt()).map_err(Error::from)?,
    ))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetRequest {
    Simulated(SimSpec),
    Csv {
        content: String,
        #[serde(default = "default_time_column")]
        time_column: String,
        #[serde(default)]
        value_columns: Vec<String>,
        /// Annotated intermediate change points.
        #[serde(default)]
        truth: Option<Vec<usize>>,
    },
}

fn default_time_column() -> String {
    "time".into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetCreated {
    pub id: String,
    pub n: usize,
    pub dt: f64,
    pub signals: Vec<String>,
    pub dropped_rows: usize,
    pub has_truth: bool,
}

async fn create_dataset(
    State(state): State<AppState>,
    body: Result<Json<DatasetRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<DatasetCreated>), ApiError> {
    let Json(req) = body?;
    let bad = |e: &dyn std::fmt::Display| ApiError::BadRequest(e.to_string());
    let (bundle, dropped_rows) = match req {
        DatasetRequest::Simulated(spec) => (simulate(&spec).map_err(|e| bad(&e))?, 0),
        DatasetRequest::Csv {
            content,
            time_column,
            value_columns,
            truth,
        } => {
            let load =
                read_csv(content.as_bytes(), &time_column, &value_columns).map_err(|e| bad(&e))?;
            let mut bundle = load.bundle;
            if let Some(points) = truth {
                bundle.truth =
                    Some(ChangePointSet::from_unsorted(points, bundle.len()).map_err(|e| bad(&e))?);
            }
            (bundle, load.dropped_rows)
        }
    };
    let created = DatasetCreated {
        id: String::new(),
        n: bundle.len(),
        dt: bundle.dt(),
        signals: bundle
            .series
            .iter()
            .map(|s| s.label().to_string())
            .collect(),
        dropped_rows,
        has_truth: bundle.truth.is_some(),
    };
    let id = state.write(|r| {
        let id = r.fresh_id("dataset");
        r.datasets.insert(id.clone(), Arc::new(bundle));
        id
    });
    tracing::info!(%id, n = created.n, "dataset registered");
    Ok((StatusCode::CREATED, Json(DatasetCreated { id, ..created })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SignalView {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetView {
    pub id: String,
    pub n: usize,
    pub dt: f64,
    pub t0: f64,
    pub signals: Vec<SignalView>,
    pub truth: Option<ChangePointSet>,
}

async fn get_dataset(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<DatasetView> {
    let bundle = state.dataset(&id)?;
    Ok(Json(DatasetView {
        n: bundle.len(),
        dt: bundle.dt(),
        t0: bundle.series[0].t0(),
        signals: bundle
            .series
            .iter()
            .map(|s| SignalView {
                label: s.label().to_string(),
                values: s.values().to_vec(),
            })
            .collect(),
        truth: bundle.truth.clone(),
        id,
    }))
}

#[derive(Debug, Deserialize)]
pub struct DetectRequest {
    pub dataset: String,
    #[serde(default = "default_method")]
    pub method: SearchMethod,
    #[serde(default = "default_cost")]
    pub cost: CostKind,
    pub penalty: Option<f64>,
    pub gamma: Option<f64>,
    pub lags: Option<usize>,
    pub min_size: Option<usize>,
    pub half_width: Option<usize>,
    pub margin: Option<MarginRule>,
    pub merge_radius: Option<usize>,
    /// Run a penalty sweep over these values instead of a single detection.
    pub penalties: Option<Vec<f64>>,
    /// Run a regularisation sweep at the fixed `penalty`.
    pub gammas: Option<Vec<f64>>,
}

fn default_method() -> SearchMethod {
    SearchMethod::Pelt
}

fn default_cost() -> CostKind {
    CostKind::L2
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectResponse {
    pub change_points: ChangePointSet,
    pub metrics: Option<MetricsReport>,
    /// Set when the request ran a sweep; the prediction is its best row.
    pub sweep_id: Option<String>,
    pub value: Option<f64>,
}

impl DetectRequest {
    fn model(&self) -> CostModel {
        let mut m = CostModel::new(self.cost);
        if let Some(g) = self.gamma {
            m = m.with_gamma(g);
        }
        if let Some(p) = self.lags {
            m = m.with_lags(p);
        }
        if let Some(s) = self.min_size {
            m = m.with_min_size(s);
        }
        m
    }

    fn options(&self) -> SweepOptions {
        let mut opts = SweepOptions::default()
            .with_method(self.method)
            .with_margin(self.margin.unwrap_or_default());
        if let Some(w) = self.half_width {
            opts = opts.with_half_width(w);
        }
        opts.merge_radius = self.merge_radius;
        opts
    }
}

async fn detect(
    State(state): State<AppState>,
    body: Result<Json<DetectRequest>, JsonRejection>,
) -> ApiResult<DetectResponse> {
    let Json(req) = body?;
    let bundle = state.dataset(&req.dataset)?;
    let model = req.model();
    model.validate().map_err(Error::from)?;
    let opts = req.options();

    let sweep = match (&req.penalties, &req.gammas, req.penalty) {
        (Some(_), Some(_), _) => {
            return Err(ApiError::BadRequest(
                "give either penalties or gammas".into(),
            ))
        }
        (Some(_), None, Some(_)) => {
            return Err(ApiError::BadRequest(
                "penalty and penalties are exclusive".into(),
            ))
        }
        (Some(grid), None, None) => {
            let (grid, b) = (grid.clone(), bundle.clone());
            Some(blocking(move || Ok(penalty_sweep(&b, &model, &grid, &opts)?)).await?)
        }
        (None, Some(gammas), Some(penalty)) => {
            let (gammas, b, kind) = (gammas.clone(), bundle.clone(), req.cost);
            Some(blocking(move || Ok(gamma_sweep(&b, kind, &gammas, penalty, &opts)?)).await?)
        }
        (None, Some(_), None) => {
            return Err(ApiError::BadRequest(
                "a gamma sweep needs a fixed penalty".into(),
            ))
        }
        (None, None, None) => return Err(ApiError::BadRequest("missing penalty".into())),
        (None, None, Some(_)) => None,
    };

    if let Some(sweep) = sweep {
        let best = sweep.best_row().clone();
        let id = state.write(|r| {
            let id = r.fresh_id("sweep");
            r.sweeps.insert(id.clone(), Arc::new(sweep));
            id
        });
        return Ok(Json(DetectResponse {
            change_points: best.change_points,
            metrics: Some(best.metrics),
            sweep_id: Some(id),
            value: Some(best.value),
        }));
    }

    let penalty = req.penalty.unwrap_or_default();
    let b = bundle.clone();
    let radius = opts
        .merge_radius
        .unwrap_or_else(|| opts.margin.margin(b.len()));
    let cps = blocking(move || {
        Ok(detect_bundle(
            &b,
            &model,
            opts.method,
            penalty,
            opts.half_width,
            radius,
        )?)
    })
    .await?;
    let metrics = score(&bundle, &cps, req.margin)?;
    Ok(Json(DetectResponse {
        change_points: cps,
        metrics,
        sweep_id: None,
        value: Some(penalty),
    }))
}

async fn get_sweep(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<SweepResult> {
    let sweep = state
        .read(|r| r.sweeps.get(&id).cloned())
        .ok_or_else(|| ApiError::NotFound(format!("unknown sweep `{id}`")))?;
    Ok(Json(sweep.as_ref().clone()))
}

#[derive(Debug, Deserialize)]
pub struct PosteriorRequest {
    pub dataset: String,
    /// Index of the signal within the dataset.
    #[serde(default)]
    pub signal: usize,
    #[serde(flatten)]
    pub config: BayesConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PosteriorResponse {
    pub posterior_id: String,
    pub paa_window: usize,
    pub k_max: usize,
    pub cp_prob: Vec<f64>,
    /// Peaks at the request's threshold and distance, on the original grid.
    pub change_points: ChangePointSet,
}

async fn bayes_posterior(
    State(state): State<AppState>,
    body: Result<Json<PosteriorRequest>, JsonRejection>,
) -> ApiResult<PosteriorResponse> {
    let Json(req) = body?;
    let bundle = state.dataset(&req.dataset)?;
    let ts = bundle
        .series
        .get(req.signal)
        .cloned()
        .ok_or_else(|| ApiError::BadRequest(format!("dataset has no signal {}", req.signal)))?;
    let cfg = req.config;
    let det = blocking(move || Ok(bayes_detect_full(&ts, &cfg)?)).await?;
    let posterior_id = state.store_posterior(Posterior {
        dataset: Some(req.dataset),
        cp_prob: det.cp_prob.clone(),
        paa_window: det.paa_window,
        n: bundle.len(),
    });
    Ok(Json(PosteriorResponse {
        posterior_id,
        paa_window: det.paa_window,
        k_max: cfg.k_max_for(det.cp_prob.len()),
        cp_prob: det.cp_prob,
        change_points: det.change_points,
    }))
}

#[derive(Debug, Deserialize)]
pub struct PeaksRequest {
    pub posterior: Option<String>,
    pub cp_prob: Option<Vec<f64>>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_distance")]
    pub distance: usize,
    pub margin: Option<MarginRule>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_distance() -> usize {
    DEFAULT_DISTANCE
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PeaksResponse {
    pub change_points: ChangePointSet,
    pub metrics: Option<MetricsReport>,
}

enum Curve {
    Stored(Arc<Posterior>),
    Raw(Vec<f64>),
}

fn curve(state: &AppState, id: Option<String>, raw: Option<Vec<f64>>) -> Result<Curve, ApiError> {
    match (id, raw) {
        (Some(id), None) => Ok(Curve::Stored(state.posterior(&id)?)),
        (None, Some(v)) => Ok(Curve::Raw(v)),
        _ => Err(ApiError::BadRequest(
            "give exactly one of posterior or cp_prob".into(),
        )),
    }
}

async fn bayes_peaks(
    State(state): State<AppState>,
    body: Result<Json<PeaksRequest>, JsonRejection>,
) -> ApiResult<PeaksResponse> {
    let Json(req) = body?;
    match curve(&state, req.posterior, req.cp_prob)? {
        Curve::Raw(p) => Ok(Json(PeaksResponse {
            change_points: detect_peaks(&p, req.threshold, req.distance)?,
            metrics: None,
        })),
        Curve::Stored(post) => {
            let reduced = detect_peaks(&post.cp_prob, req.threshold, req.distance)?;
            let cps = map_to_original(reduced.intermediate(), post.paa_window, post.n)?;
            let metrics = match &post.dataset {
                Some(id) => score(&*state.dataset(id)?, &cps, req.margin)?,
                None => None,
            };
            Ok(Json(PeaksResponse {
                change_points: cps,
                metrics,
            }))
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct FuseRequest {
    pub posterior: Option<String>,
    pub cp_prob: Option<Vec<f64>>,
    pub user_belief: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FuseResponse {
    /// Id of the stored fused curve when the input was a stored posterior.
    pub posterior_id: Option<String>,
    pub cp_prob: Vec<f64>,
    pub degenerate: Vec<usize>,
}

async fn fuse(
    State(state): State<AppState>,
    body: Result<Json<FuseRequest>, JsonRejection>,
) -> ApiResult<FuseResponse> {
    let Json(req) = body?;
    match curve(&state, req.posterior, req.cp_prob)? {
        Curve::Raw(p) => {
            let f = fuse_user_belief(&p, &req.user_belief)?;
            Ok(Json(FuseResponse {
                posterior_id: None,
                cp_prob: f.cp_prob,
                degenerate: f.degenerate,
            }))
        }
        Curve::Stored(post) => {
            let f = fuse_user_belief(&post.cp_prob, &req.user_belief)?;
            let id = state.store_posterior(Posterior {
                dataset: post.dataset.clone(),
                cp_prob: f.cp_prob.clone(),
                paa_window: post.paa_window,
                n: post.n,
            });
            Ok(Json(FuseResponse {
                posterior_id: Some(id),
                cp_prob: f.cp_prob,
                degenerate: f.degenerate,
            }))
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct AnnotationRequest {
    pub dataset: String,
    /// The prediction being edited.
    pub change_points: Vec<usize>,
    #[serde(default)]
    pub add: Vec<usize>,
    #[serde(default)]
    pub remove: Vec<usize>,
    pub margin: Option<MarginRule>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub change_points: ChangePointSet,
    pub metrics: Option<MetricsReport>,
}

async fn annotate(
    State(state): State<AppState>,
    body: Result<Json<AnnotationRequest>, JsonRejection>,
) -> ApiResult<AnnotationResponse> {
    let Json(req) = body?;
    let bundle = state.dataset(&req.dataset)?;
    let bad = |e: SearchError| ApiError::BadRequest(e.to_string());
    let mut cps = ChangePointSet::from_unsorted(req.change_points, bundle.len()).map_err(bad)?;
    for p in &req.remove {
        cps.remove(*p);
    }
    for &p in &req.add {
        cps.insert(p).map_err(bad)?;
    }
    let metrics = score(&bundle, &cps, req.margin)?;
    Ok(Json(AnnotationResponse {
        change_points: cps,
        metrics,
    }))
}
