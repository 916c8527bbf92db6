//! The assessment loop: initial design, measure, refit, acquire, stop.
//!
//! [`SessionState`] is a step machine driven either by [`run_assessment`]
//! against a [`Responder`] or, one request at a time, by the HTTP service.
//! Every choice it makes depends only on the configuration, the seed and the
//! measurements so far, which is what makes interrupted sessions resumable.

use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::active_learning::{acquire_ivr, acquire_us, init_design, should_reoptimize, should_stop, AcquisitionError, StopRule, SNAPSHOT_GRID};
use crate::domain::{Acquisition, ConfigError, DomainError, FovBounds, FovPoint, Measurement, Mode, SessionConfig, SpawnPoint};
use crate::gp::{grid_points, FitOptions, GpError, GpModel, Hyperparams};
use crate::rng::{derive_seed, rng_from, tags};
use crate::treatment::{extract_border, next_cue, BorderOptions, BorderSet, TreatmentError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub raw_time_s: f64,
    pub found: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("responder failed: {0}")]
pub struct ResponderError(pub String);

/// Source of answers: a simulated subject or a person.
pub trait Responder {
    /// Presents `spawn` as trial number `trial` (0-based) and waits for the outcome.
    fn respond(&mut self, spawn: &SpawnPoint, trial: usize) -> Result<Response, ResponderError>;
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("session is already finished")]
    AlreadyFinished,
    #[error("configuration hash mismatch: stored {stored}, got {actual}")]
    ConfigMismatch { stored: String, actual: String },
    #[error("response for spawn {got} but the current stimulus is {expected:?}")]
    Conflict { expected: Option<u32>, got: u32 },
    #[error(transparent)]
    Measurement(#[from] DomainError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Treatment(#[from] TreatmentError),
    #[error("treatment sessions need a trained model")]
    MissingModel,
    #[error("session interrupted after {} responses: {reason}", .state.measurements.len())]
    Interrupted { state: Box<SessionState>, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Converged,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Phase {
    AwaitingResponse { spawn_id: u32, onset_ms: u64 },
    Idle,
    Finished { reason: StopReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Warmup,
    Initial,
    Acquired,
    Cue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    StimulusShown { trial: usize, spawn_id: u32, selection: Selection },
    Acquisition { rule: Acquisition, spawn_id: u32, score: f64 },
    Response { trial: usize, spawn_id: u32, raw_time_s: f64, found: bool, y: f64, warmup: bool },
    Refit { n: usize, theta: Hyperparams, reoptimized: bool },
    Stop { reason: StopReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Milliseconds since the Unix epoch, never decreasing within a session.
    pub wall_ms: u64,
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub config: SessionConfig,
    pub config_hash: String,
    pub phase: Phase,
    pub measurements: Vec<Measurement>,
    pub model: Option<GpModel>,
    pub events: Vec<Event>,
    /// Warm-up spawns followed by the initial design, in presentation order.
    pub plan: Vec<u32>,
    /// Most recent posterior-mean snapshots used by the convergence rule.
    #[serde(default)]
    pub snapshots: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub border: Option<BorderSet>,
}

pub fn wall_clock_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl SessionState {
    /// A fresh assessment session.
    pub fn new(session_id: impl Into<String>, config: SessionConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let mut state = Self::empty(session_id.into(), config);
        if state.config.mode == Mode::Treatment {
            return Err(EngineError::MissingModel);
        }
        let spawns = state.config.spawn_points();
        let init = init_design(&spawns, state.config.n_init, state.config.init_strategy, derive_seed(state.config.seed, tags::INIT_DESIGN, 0))?;
        let mut rest: Vec<u32> = spawns.iter().map(|s| s.id).filter(|id| !init.contains(id)).collect();
        rest.shuffle(&mut rng_from(derive_seed(state.config.seed, tags::INIT_DESIGN, 1)));
        rest.truncate(state.config.warmup_trials);
        state.plan = rest.into_iter().chain(init).collect();
        Ok(state)
    }

    /// A treatment session cueing along the border of `model`.
    pub fn new_treatment(session_id: impl Into<String>, config: SessionConfig, model: GpModel, source_ref: &str) -> Result<Self, EngineError> {
        config.validate()?;
        let mut state = Self::empty(session_id.into(), config);
        state.config.mode = Mode::Treatment;
        state.config_hash = state.config.hash();
        let border = extract_border(&model, state.config.treatment.threshold, source_ref, &BorderOptions::default())?;
        if border.is_empty() {
            return Err(TreatmentError::EmptyBorder.into());
        }
        state.border = Some(border);
        state.model = Some(model);
        Ok(state)
    }

    fn empty(session_id: String, config: SessionConfig) -> Self {
        Self {
            session_id,
            config_hash: config.hash(),
            config,
            phase: Phase::Idle,
            measurements: Vec::new(),
            model: None,
            events: Vec::new(),
            plan: Vec::new(),
            snapshots: Vec::new(),
            border: None,
        }
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, Phase::Finished { .. })
    }

    pub fn spawns(&self) -> Vec<SpawnPoint> {
        self.config.spawn_points()
    }

    pub fn spawn(&self, id: u32) -> Option<SpawnPoint> {
        self.spawns().into_iter().find(|s| s.id == id)
    }

    pub fn current_stimulus(&self) -> Option<u32> {
        match self.phase {
            Phase::AwaitingResponse { spawn_id, .. } => Some(spawn_id),
            _ => None,
        }
    }

    /// Measurements that feed the model.
    pub fn model_measurements(&self) -> impl Iterator<Item = &Measurement> {
        self.measurements.iter().filter(|m| !m.warmup)
    }

    pub fn verify_config(&self) -> Result<(), EngineError> {
        let actual = self.config.hash();
        if actual != self.config_hash {
            return Err(EngineError::ConfigMismatch { stored: self.config_hash.clone(), actual });
        }
        Ok(())
    }

    fn push(&mut self, now_ms: u64, event: EventKind) {
        let wall_ms = self.events.last().map_or(now_ms, |e| e.wall_ms.max(now_ms));
        self.events.push(Event { seq: self.events.len() as u64, wall_ms, event });
    }

    fn stop_reason(&self) -> Option<StopReason> {
        let n = self.measurements.len();
        if self.config.mode == Mode::Treatment {
            return (n >= self.config.n_stimuli).then_some(StopReason::Budget);
        }
        if n >= self.config.budget() {
            return Some(StopReason::Budget);
        }
        if let rule @ StopRule::PosteriorConvergence { .. } = self.config.stop {
            if should_stop(&self.snapshots, &rule, self.model_measurements().count()) {
                return Some(StopReason::Converged);
            }
        }
        if n >= self.config.layout.len() {
            return Some(StopReason::Exhausted);
        }
        None
    }

    fn finish_if_done(&mut self, now_ms: u64) -> bool {
        if let Some(reason) = self.stop_reason() {
            self.phase = Phase::Finished { reason };
            self.push(now_ms, EventKind::Stop { reason });
            return true;
        }
        false
    }

    /// The stimulus to present next, or `None` once the session is finished.
    ///
    /// While a stimulus is outstanding this returns it again unchanged.
    pub fn next_stimulus(&mut self, now_ms: u64) -> Result<Option<SpawnPoint>, EngineError> {
        match self.phase {
            Phase::Finished { .. } => return Ok(None),
            Phase::AwaitingResponse { spawn_id, .. } => return Ok(self.spawn(spawn_id)),
            Phase::Idle => {}
        }
        if self.finish_if_done(now_ms) {
            return Ok(None);
        }
        let trial = self.measurements.len();
        let spawns = self.spawns();
        let (spawn, selection) = if self.config.mode == Mode::Treatment {
            let border = self.border.as_ref().ok_or(EngineError::MissingModel)?;
            let window = self.config.treatment.history_window.min(trial);
            let history: Vec<u32> = self.measurements[trial - window..].iter().map(|m| m.spawn_id).collect();
            let seed = derive_seed(self.config.seed, tags::CUE, trial as u64);
            (next_cue(border, &spawns, self.config.treatment.band_deg, &history, seed)?, Selection::Cue)
        } else if trial < self.plan.len() {
            let id = self.plan[trial];
            let sel = if trial < self.config.warmup_trials { Selection::Warmup } else { Selection::Initial };
            (*spawns.iter().find(|s| s.id == id).expect("plan ids come from the layout"), sel)
        } else {
            let candidates: Vec<SpawnPoint> = spawns.iter().filter(|s| !self.measurements.iter().any(|m| m.spawn_id == s.id)).copied().collect();
            let model = self.model.as_ref().ok_or(AcquisitionError::Precondition("no model before acquisition".into()))?;
            let result = match self.config.acquisition {
                Acquisition::Us => acquire_us(model, &candidates)?,
                Acquisition::Ivr => acquire_ivr(model, &candidates, &spawns)?,
            };
            let score = result.scores[&result.chosen];
            self.push(now_ms, EventKind::Acquisition { rule: self.config.acquisition, spawn_id: result.chosen, score });
            (*candidates.iter().find(|s| s.id == result.chosen).expect("chosen among candidates"), Selection::Acquired)
        };
        self.phase = Phase::AwaitingResponse { spawn_id: spawn.id, onset_ms: now_ms };
        self.push(now_ms, EventKind::StimulusShown { trial, spawn_id: spawn.id, selection });
        Ok(Some(spawn))
    }

    /// Records the outcome for the outstanding stimulus and refits the model.
    ///
    /// On error the state is left unchanged.
    pub fn submit_response(&mut self, spawn_id: u32, raw_time_s: f64, found: bool, now_ms: u64) -> Result<(), EngineError> {
        if self.is_finished() {
            return Err(EngineError::AlreadyFinished);
        }
        let current = self.current_stimulus();
        if current != Some(spawn_id) {
            return Err(EngineError::Conflict { expected: current, got: spawn_id });
        }
        let trial = self.measurements.len();
        let mut m = Measurement::new(spawn_id, raw_time_s, found, self.config.t_max_s)?;
        m.warmup = self.config.mode == Mode::Assessment && trial < self.config.warmup_trials;

        let refit = if self.config.mode == Mode::Assessment && !m.warmup {
            let n_model = self.model_measurements().count() + 1;
            if n_model >= self.config.n_init {
                Some(self.refit_with(&m)?)
            } else {
                None
            }
        } else {
            None
        };

        self.measurements.push(m);
        self.push(now_ms, EventKind::Response { trial, spawn_id, raw_time_s: m.raw_time_s, found: m.found, y: m.y, warmup: m.warmup });
        if let Some((model, reoptimized)) = refit {
            let n = model.len();
            self.push(now_ms, EventKind::Refit { n, theta: *model.theta(), reoptimized });
            self.record_snapshot(&model);
            self.model = Some(model);
        }
        self.phase = Phase::Idle;
        self.finish_if_done(now_ms);
        Ok(())
    }

    fn refit_with(&self, extra: &Measurement) -> Result<(GpModel, bool), EngineError> {
        let spawns = self.spawns();
        let pos = |id: u32| spawns.iter().find(|s| s.id == id).map(|s| s.pos).expect("measured ids come from the layout");
        let (x, y): (Vec<FovPoint>, Vec<f64>) = self.model_measurements().chain(std::iter::once(extra)).map(|m| (pos(m.spawn_id), m.y)).unzip();
        let n = x.len();
        let prev = self.model.as_ref().map(|m| *m.theta());
        match prev {
            Some(theta) if !should_reoptimize(n) => Ok((GpModel::with_hyperparams(x, &y, theta)?, false)),
            _ => {
                let opts = FitOptions { initial: prev, ..FitOptions::with_seed(derive_seed(self.config.seed, tags::FIT, n as u64)) };
                Ok((GpModel::fit(x, &y, &opts)?, true))
            }
        }
    }

    fn record_snapshot(&mut self, model: &GpModel) {
        let StopRule::PosteriorConvergence { patience, .. } = self.config.stop else {
            return;
        };
        let grid = grid_points(&FovBounds::FULL, SNAPSHOT_GRID.0, SNAPSHOT_GRID.1);
        self.snapshots.push(model.predict_unchecked(&grid).into_iter().map(|p| p.mean).collect());
        let keep = patience + 1;
        if self.snapshots.len() > keep {
            self.snapshots.drain(..self.snapshots.len() - keep);
        }
    }

    /// Drops an outstanding stimulus so the next call re-selects it.
    pub fn abandon_stimulus(&mut self) {
        if let Phase::AwaitingResponse { .. } = self.phase {
            self.phase = Phase::Idle;
        }
    }

    /// Events with `seq >= from`.
    pub fn events_since(&self, from: u64) -> &[Event] {
        let start = (from as usize).min(self.events.len());
        &self.events[start..]
    }

    /// A copy with every wall-clock field zeroed.
    pub fn without_timestamps(&self) -> Self {
        let mut s = self.clone();
        for e in &mut s.events {
            e.wall_ms = 0;
        }
        if let Phase::AwaitingResponse { onset_ms, .. } = &mut s.phase {
            *onset_ms = 0;
        }
        s
    }

    pub fn to_json(&self, deterministic: bool) -> String {
        let s = if deterministic { self.without_timestamps() } else { self.clone() };
        serde_json::to_string_pretty(&s).expect("session state serializes")
    }
}

/// Session id used for offline runs.
pub fn default_session_id(config: &SessionConfig) -> String {
    format!("{}-{:016x}", config.scene, config.seed)
}

pub fn run_assessment(config: SessionConfig, responder: &mut dyn Responder) -> Result<SessionState, EngineError> {
    let state = SessionState::new(default_session_id(&config), config)?;
    drive(state, responder)
}

/// Continues an interrupted session.
pub fn resume(mut state: SessionState, responder: &mut dyn Responder) -> Result<SessionState, EngineError> {
    if state.is_finished() {
        return Err(EngineError::AlreadyFinished);
    }
    state.verify_config()?;
    state.abandon_stimulus();
    drive(state, responder)
}

fn drive(mut state: SessionState, responder: &mut dyn Responder) -> Result<SessionState, EngineError> {
    while let Some(spawn) = state.next_stimulus(wall_clock_ms())? {
        let trial = state.measurements.len();
        match responder.respond(&spawn, trial) {
            Ok(r) => state.submit_response(spawn.id, r.raw_time_s, r.found, wall_clock_ms())?,
            Err(e) => {
                state.abandon_stimulus();
                return Err(EngineError::Interrupted { state: Box::new(state), reason: e.0 });
            }
        }
    }
    Ok(state)
}
