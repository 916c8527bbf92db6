//! Session registry and request logic, independent of the HTTP layer.
//!
//! Each session sits behind its own mutex so requests for one session are
//! serialized while different sessions proceed in parallel. The latest model
//! is also published through a read-write lock, letting heatmap, border and
//! model reads run without waiting for a refit in progress.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use axum::http::StatusCode;
use neglect_core::assessment::{wall_clock_ms, EngineError, Phase, StopReason};
use neglect_core::domain::{FieldError, FovBounds, Mode};
use neglect_core::heatmap::{default_mask_threshold, evaluate_grid, render, Which, DEFAULT_GRID};
use neglect_core::store::{valid_session_id, SessionStore, StoreError};
use neglect_core::treatment::{extract_border, BorderOptions, TreatmentError};
use neglect_core::{BorderSet, GpModel, Hyperparams, SceneId, SessionConfig, SessionState, SpawnPoint};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Environment variable naming the persistence directory.
pub const DATA_DIR_ENV: &str = "NEGLECT_MAPPER_DATA_DIR";

const MAX_GRID: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub trial: usize,
    pub spawn_id: u32,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub scene: SceneId,
}

impl Stimulus {
    fn new(trial: usize, s: &SpawnPoint) -> Self {
        Self { trial, spawn_id: s.id, azimuth_deg: s.pos.azimuth_deg, elevation_deg: s.pos.elevation_deg, scene: s.scene }
    }
}

/// Reply to a response: the next stimulus, or the end of the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Next {
    pub finished: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stimulus: Option<Stimulus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub first_stimulus: Option<Stimulus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Links {
    pub stimulus: String,
    pub response: String,
    pub heatmap: String,
    pub border: String,
    pub model: String,
}

/// Public summary of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub mode: Mode,
    pub phase: Phase,
    pub n_measured: usize,
    pub budget: usize,
    pub config_hash: String,
    pub current_stimulus: Option<Stimulus>,
    pub theta: Option<Hyperparams>,
    pub links: Links,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub config: SessionConfig,
    #[serde(default)]
    pub session_id: Option<String>,
    /// Treatment only: the assessment model to cue from.
    #[serde(default)]
    pub model: Option<GpModel>,
    /// Treatment only: take the model from this existing session instead.
    #[serde(default)]
    pub source_session: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseBody {
    pub spawn_id: u32,
    pub raw_time_s: f64,
    pub found: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Ppm,
    Png,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeatmapQuery {
    pub which: Which,
    pub format: Format,
    pub nx: usize,
    pub ny: usize,
}

impl Default for HeatmapQuery {
    fn default() -> Self {
        Self { which: Which::Mean, format: Format::Json, nx: DEFAULT_GRID.0, ny: DEFAULT_GRID.1 }
    }
}

impl HeatmapQuery {
    pub fn parse(params: &HashMap<String, String>) -> Result<Self, ApiError> {
        let mut q = Self::default();
        let mut errors = Vec::new();
        for (k, v) in params {
            match k.as_str() {
                "which" => match v.as_str() {
                    "mean" => q.which = Which::Mean,
                    "two_sigma" => q.which = Which::TwoSigma,
                    _ => errors.push(field("which", "expected mean or two_sigma")),
                },
                "format" => match v.as_str() {
                    "json" => q.format = Format::Json,
                    "csv" => q.format = Format::Csv,
                    "ppm" => q.format = Format::Ppm,
                    "png" => q.format = Format::Png,
                    _ => errors.push(field("format", "expected json, csv, ppm or png")),
                },
                "nx" | "ny" => match v.parse::<usize>() {
                    Ok(n) if (2..=MAX_GRID).contains(&n) => {
                        if k == "nx" {
                            q.nx = n
                        } else {
                            q.ny = n
                        }
                    }
                    _ => errors.push(field(k, &format!("expected an integer in 2..={MAX_GRID}"))),
                },
                _ => errors.push(field(k, "unknown parameter")),
            }
        }
        if errors.is_empty() {
            Ok(q)
        } else {
            Err(ApiError::invalid("invalid heatmap query", errors))
        }
    }
}

pub struct Rendered {
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

fn field(name: &str, message: &str) -> FieldError {
    FieldError { field: name.to_string(), message: message.to_string() }
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    pub fn invalid(message: &str, fields: Vec<FieldError>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, body: json!({ "error": message, "fields": fields }) }
    }

    pub fn bad_json(e: &serde_json::Error) -> Self {
        Self::invalid("malformed request body", vec![field("body", &e.to_string())])
    }

    fn unknown(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }

    fn no_model() -> Self {
        Self::new(StatusCode::CONFLICT, "no model yet; the initial design is still being measured")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::Config(c) => Self::invalid(&msg, c.fields),
            EngineError::Conflict { expected, got } => {
                Self { status: StatusCode::CONFLICT, body: json!({ "error": msg, "expected": expected, "got": got }) }
            }
            EngineError::AlreadyFinished | EngineError::ConfigMismatch { .. } => Self::new(StatusCode::CONFLICT, msg),
            EngineError::Measurement(_) => Self::invalid(&msg, vec![field("raw_time_s", &msg)]),
            EngineError::MissingModel | EngineError::Treatment(TreatmentError::EmptyBorder) => {
                Self::invalid(&msg, vec![field("model", &msg)])
            }
            EngineError::Treatment(TreatmentError::NoCueAvailable { .. }) => Self::new(StatusCode::CONFLICT, msg),
            _ => Self::internal(msg),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => Self::unknown(&id),
            StoreError::InvalidId(_) => Self::invalid("invalid session id", vec![field("session_id", &e.to_string())]),
            other => Self::internal(other.to_string()),
        }
    }
}

struct Live {
    state: SessionState,
    /// First event sequence number not yet written to the store.
    persisted: u64,
}

struct Slot {
    live: Mutex<Live>,
    model: RwLock<Option<Arc<GpModel>>>,
    config: SessionConfig,
}

impl Slot {
    fn new(state: SessionState, persisted: u64) -> Self {
        Self {
            model: RwLock::new(state.model.clone().map(Arc::new)),
            config: state.config.clone(),
            live: Mutex::new(Live { state, persisted }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Live> {
        // A panic mid-request leaves the last consistent state in place.
        self.live.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn snapshot(&self) -> Option<Arc<GpModel>> {
        self.model.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn publish(&self, model: Option<&GpModel>) {
        *self.model.write().unwrap_or_else(|p| p.into_inner()) = model.cloned().map(Arc::new);
    }
}

#[derive(Default)]
pub struct App {
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    store: Option<SessionStore>,
}

impl App {
    pub fn new(store: Option<SessionStore>) -> Self {
        Self { sessions: RwLock::default(), store }
    }

    /// Persists under `NEGLECT_MAPPER_DATA_DIR` when it is set.
    pub fn from_env() -> Result<Self, StoreError> {
        let store = match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Some(SessionStore::open(dir)?),
            _ => None,
        };
        Ok(Self::new(store))
    }

    pub fn store(&self) -> Option<&SessionStore> {
        self.store.as_ref()
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        if let Some(s) = self.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id) {
            return Ok(s.clone());
        }
        let Some(store) = &self.store else { return Err(ApiError::unknown(id)) };
        if !valid_session_id(id) {
            return Err(ApiError::unknown(id));
        }
        let state = store.load(id)?;
        state.verify_config()?;
        let persisted = state.events.len() as u64;
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        Ok(map.entry(id.to_string()).or_insert_with(|| Arc::new(Slot::new(state, persisted))).clone())
    }

    fn commit(&self, live: &mut Live) -> Result<(), ApiError> {
        if let Some(store) = &self.store {
            live.persisted = store.commit(&live.state, live.persisted)?;
        }
        Ok(())
    }

    pub fn list(&self) -> Result<Vec<String>, ApiError> {
        let mut ids: BTreeSet<String> = self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect();
        if let Some(store) = &self.store {
            ids.extend(store.list()?);
        }
        Ok(ids.into_iter().collect())
    }

    pub fn create(&self, req: CreateSession) -> Result<Created, ApiError> {
        let id = match req.session_id {
            Some(id) if !valid_session_id(&id) => {
                return Err(ApiError::invalid("invalid session id", vec![field("session_id", "use 1-128 characters from [A-Za-z0-9_-]")]))
            }
            Some(id) => id,
            None => uuid::Uuid::new_v4().simple().to_string(),
        };
        if self.slot(&id).is_ok() {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("session {id} already exists")));
        }
        let mut state = match req.config.mode {
            Mode::Assessment => {
                if req.model.is_some() || req.source_session.is_some() {
                    return Err(ApiError::invalid("assessment sessions start without a model", vec![field("model", "only used in treatment mode")]));
                }
                SessionState::new(id.clone(), req.config)?
            }
            Mode::Treatment => {
                let (model, source) = match (req.model, req.source_session) {
                    (Some(m), None) => (m, "inline".to_string()),
                    (None, Some(src)) => {
                        let model = self.slot(&src)?.snapshot().ok_or_else(ApiError::no_model)?;
                        ((*model).clone(), src)
                    }
                    _ => return Err(ApiError::invalid("treatment needs a model", vec![field("model", "give exactly one of model or source_session")])),
                };
                SessionState::new_treatment(id.clone(), req.config, model, &source)?
            }
        };
        let first = state.next_stimulus(wall_clock_ms())?;
        let trial = state.measurements.len();
        let slot = Arc::new(Slot::new(state, 0));
        {
            let mut live = slot.lock();
            self.commit(&mut live)?;
        }
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        if map.contains_key(&id) {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("session {id} already exists")));
        }
        map.insert(id.clone(), slot);
        tracing::info!(session = %id, "session created");
        Ok(Created { session_id: id, first_stimulus: first.map(|s| Stimulus::new(trial, &s)) })
    }

    pub fn session(&self, id: &str) -> Result<ApiSession, ApiError> {
        let slot = self.slot(id)?;
        let live = slot.lock();
        let s = &live.state;
        let base = format!("/api/v1/sessions/{id}");
        Ok(ApiSession {
            session_id: s.session_id.clone(),
            mode: s.config.mode,
            phase: s.phase,
            n_measured: s.measurements.len(),
            budget: match s.config.mode {
                Mode::Assessment => s.config.budget(),
                Mode::Treatment => s.config.n_stimuli,
            },
            config_hash: s.config_hash.clone(),
            current_stimulus: s.current_stimulus().and_then(|sid| s.spawn(sid)).map(|sp| Stimulus::new(s.measurements.len(), &sp)),
            theta: s.model.as_ref().map(|m| *m.theta()),
            links: Links {
                stimulus: format!("{base}/stimulus"),
                response: format!("{base}/response"),
                heatmap: format!("{base}/heatmap"),
                border: format!("{base}/border"),
                model: format!("{base}/model"),
            },
        })
    }

    /// Selects the next stimulus if none is outstanding, persisting the choice.
    fn advance(&self, slot: &Slot, live: &mut Live) -> Result<Next, ApiError> {
        let before = live.state.events.len();
        let next = live.state.next_stimulus(wall_clock_ms());
        if live.state.events.len() != before {
            self.commit(live)?;
        }
        let trial = live.state.measurements.len();
        slot.publish(live.state.model.as_ref());
        Ok(match next? {
            Some(sp) => Next { finished: false, stimulus: Some(Stimulus::new(trial, &sp)), reason: None },
            None => Next {
                finished: true,
                stimulus: None,
                reason: match live.state.phase {
                    Phase::Finished { reason } => Some(reason),
                    _ => None,
                },
            },
        })
    }

    pub fn stimulus(&self, id: &str) -> Result<Stimulus, ApiError> {
        let slot = self.slot(id)?;
        let mut live = slot.lock();
        match self.advance(&slot, &mut live)? {
            Next { stimulus: Some(s), .. } => Ok(s),
            _ => Err(ApiError::new(StatusCode::NOT_FOUND, "session finished")),
        }
    }

    /// Records a response. A repeat of the most recent response is answered
    /// with the same payload instead of a conflict.
    pub fn respond(&self, id: &str, body: ResponseBody) -> Result<Next, ApiError> {
        let slot = self.slot(id)?;
        let mut live = slot.lock();
        let state = &live.state;
        let is_repeat = state.current_stimulus() != Some(body.spawn_id) && state.measurements.last().is_some_and(|m| m.spawn_id == body.spawn_id);
        if !is_repeat {
            live.state.submit_response(body.spawn_id, body.raw_time_s, body.found, wall_clock_ms())?;
            self.commit(&mut live)?;
        }
        self.advance(&slot, &mut live)
    }

    pub fn cue(&self, id: &str) -> Result<Stimulus, ApiError> {
        let slot = self.slot(id)?;
        if slot.config.mode != Mode::Treatment {
            return Err(ApiError::new(StatusCode::CONFLICT, "cues are only served by treatment sessions"));
        }
        self.stimulus(id)
    }

    pub fn model(&self, id: &str) -> Result<Arc<GpModel>, ApiError> {
        self.slot(id)?.snapshot().ok_or_else(ApiError::no_model)
    }

    pub fn heatmap(&self, id: &str, q: HeatmapQuery) -> Result<Rendered, ApiError> {
        let model = self.model(id)?;
        let h = evaluate_grid(&model, &FovBounds::FULL, q.nx, q.ny, default_mask_threshold(&model)).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(match q.format {
            Format::Json => Rendered { content_type: "application/json", body: serde_json::to_vec(&h).map_err(|e| ApiError::internal(e.to_string()))? },
            Format::Csv => Rendered { content_type: "text/csv", body: h.to_csv().into_bytes() },
            Format::Ppm => Rendered { content_type: "image/x-portable-pixmap", body: render(&h, q.which).to_ppm() },
            Format::Png => Rendered { content_type: "image/png", body: render(&h, q.which).to_png().map_err(|e| ApiError::internal(e.to_string()))? },
        })
    }

    pub fn border(&self, id: &str, threshold: Option<f64>) -> Result<BorderSet, ApiError> {
        let slot = self.slot(id)?;
        let threshold = threshold.unwrap_or(slot.config.treatment.threshold);
        let model = slot.snapshot().ok_or_else(ApiError::no_model)?;
        extract_border(&model, threshold, id, &BorderOptions::default()).map_err(|e| match e {
            TreatmentError::InvalidThreshold(_) => ApiError::invalid("invalid threshold", vec![field("threshold", &e.to_string())]),
            other => ApiError::internal(other.to_string()),
        })
    }
}
