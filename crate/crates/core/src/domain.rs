//! Field-of-view geometry, session configuration and measurements.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active_learning::{InitStrategy, StopRule};
use crate::rng::{derive_seed, rng_from, tags};

/// Half-width of the horizontal field of view in degrees.
pub const AZIMUTH_LIMIT_DEG: f64 = 50.5;
/// Half-height of the vertical field of view in degrees.
pub const ELEVATION_LIMIT_DEG: f64 = 30.0;
/// Smallest normalized target; a zero search time would otherwise collapse to 0.
pub const MIN_TARGET: f64 = 0.001;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DomainError {
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("point ({azimuth_deg}, {elevation_deg}) lies outside the field of view")]
    OutOfDomain { azimuth_deg: f64, elevation_deg: f64 },
}

/// A location in the subject's field of view, in degrees.
///
/// Negative azimuth is left, negative elevation is down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovPoint {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl FovPoint {
    pub const fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self { azimuth_deg, elevation_deg }
    }

    pub fn try_new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self, DomainError> {
        let p = Self::new(azimuth_deg, elevation_deg);
        if p.in_bounds() {
            Ok(p)
        } else {
            Err(DomainError::OutOfDomain { azimuth_deg, elevation_deg })
        }
    }

    pub fn in_bounds(&self) -> bool {
        FovBounds::FULL.contains(self)
    }

    pub fn distance_sq(&self, other: &FovPoint) -> f64 {
        let da = self.azimuth_deg - other.azimuth_deg;
        let de = self.elevation_deg - other.elevation_deg;
        da * da + de * de
    }

    pub fn distance(&self, other: &FovPoint) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

/// Axis-aligned rectangle in field-of-view coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovBounds {
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
}

impl FovBounds {
    pub const FULL: FovBounds = FovBounds {
        az_min: -AZIMUTH_LIMIT_DEG,
        az_max: AZIMUTH_LIMIT_DEG,
        el_min: -ELEVATION_LIMIT_DEG,
        el_max: ELEVATION_LIMIT_DEG,
    };

    pub fn contains(&self, p: &FovPoint) -> bool {
        p.azimuth_deg.is_finite()
            && p.elevation_deg.is_finite()
            && (self.az_min..=self.az_max).contains(&p.azimuth_deg)
            && (self.el_min..=self.el_max).contains(&p.elevation_deg)
    }

    pub fn width(&self) -> f64 {
        self.az_max - self.az_min
    }

    pub fn height(&self) -> f64 {
        self.el_max - self.el_min
    }

    /// True when the rectangle has no area or non-finite edges.
    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
            || !self.width().is_finite()
            || !self.height().is_finite()
    }
}

impl Default for FovBounds {
    fn default() -> Self {
        Self::FULL
    }
}

/// Spatial region a scene exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    NearPeripersonal,
    FarPeripersonal,
    Extrapersonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SceneId {
    Table,
    Kitchen,
    Playground,
}

impl SceneId {
    pub const ALL: [SceneId; 3] = [SceneId::Table, SceneId::Kitchen, SceneId::Playground];

    pub fn region(self) -> Region {
        match self {
            SceneId::Table => Region::NearPeripersonal,
            SceneId::Kitchen => Region::FarPeripersonal,
            SceneId::Playground => Region::Extrapersonal,
        }
    }

    fn tag(self) -> u64 {
        match self {
            SceneId::Table => 0,
            SceneId::Kitchen => 1,
            SceneId::Playground => 2,
        }
    }
}

impl fmt::Display for SceneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SceneId::Table => "table",
            SceneId::Kitchen => "kitchen",
            SceneId::Playground => "playground",
        };
        f.write_str(s)
    }
}

/// One of the predefined stimulus locations of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnPoint {
    pub id: u32,
    pub pos: FovPoint,
    pub scene: SceneId,
}

/// Jittered-grid spawn layout over the full field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpawnLayout {
    pub cols: usize,
    pub rows: usize,
    /// Maximum offset from the cell center as a fraction of the cell size.
    pub jitter_frac: f64,
}

impl Default for SpawnLayout {
    fn default() -> Self {
        Self { cols: 15, rows: 9, jitter_frac: 0.25 }
    }
}

impl SpawnLayout {
    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generates the layout. Ids run row-major from the bottom-left cell.
    pub fn generate(&self, scene: SceneId, seed: u64) -> Vec<SpawnPoint> {
        let b = FovBounds::FULL;
        let cw = b.width() / self.cols as f64;
        let ch = b.height() / self.rows as f64;
        let mut rng = rng_from(derive_seed(seed, tags::LAYOUT, scene.tag()));
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (mut ja, mut je) = (0.0, 0.0);
                if self.jitter_frac > 0.0 {
                    ja = rng.random_range(-1.0..=1.0) * self.jitter_frac * cw;
                    je = rng.random_range(-1.0..=1.0) * self.jitter_frac * ch;
                }
                let az = b.az_min + (c as f64 + 0.5) * cw + ja;
                let el = b.el_min + (r as f64 + 0.5) * ch + je;
                out.push(SpawnPoint {
                    id: out.len() as u32,
                    pos: FovPoint::new(az, el),
                    scene,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Assessment,
    Treatment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Acquisition {
    #[serde(rename = "US")]
    Us,
    #[serde(rename = "IVR")]
    Ivr,
}

/// Cueing parameters used by treatment sessions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreatmentConfig {
    /// Normalized search time separating neglected from attended space.
    pub threshold: f64,
    pub band_deg: f64,
    pub history_window: usize,
}

impl Default for TreatmentConfig {
    fn default() -> Self {
        Self { threshold: 0.5, band_deg: 5.0, history_window: 3 }
    }
}

/// Everything a therapist sets before a session starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub mode: Mode,
    pub scene: SceneId,
    pub n_stimuli: usize,
    pub t_max_s: f64,
    pub min_gaze_distance_deg: f64,
    /// Number of distractors shown with each stimulus.
    pub difficulty: u32,
    pub dwell_s: f64,
    pub n_init: usize,
    pub init_strategy: InitStrategy,
    pub acquisition: Acquisition,
    pub stop: StopRule,
    pub seed: u64,
    pub layout: SpawnLayout,
    /// Leading trials that are logged but never used for fitting.
    pub warmup_trials: usize,
    pub treatment: TreatmentConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Assessment,
            scene: SceneId::Table,
            n_stimuli: 30,
            t_max_s: 30.0,
            min_gaze_distance_deg: 2.0,
            difficulty: 0,
            dwell_s: 1.0,
            n_init: 5,
            init_strategy: InitStrategy::Random,
            acquisition: Acquisition::Us,
            stop: StopRule::FixedBudget { budget: 30 },
            seed: 0,
            layout: SpawnLayout::default(),
            warmup_trials: 0,
            treatment: TreatmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[error("invalid session configuration: {}", .fields.iter().map(|f| format!("{}: {}", f.field, f.message)).collect::<Vec<_>>().join("; "))]
pub struct ConfigError {
    pub fields: Vec<FieldError>,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut fields = Vec::new();
        let mut bad = |field: &str, message: String| {
            fields.push(FieldError { field: field.to_string(), message })
        };
        if self.n_stimuli == 0 {
            bad("n_stimuli", "must be positive".into());
        }
        if !(self.t_max_s.is_finite() && self.t_max_s > 0.0) {
            bad("t_max_s", format!("must be a positive number, got {}", self.t_max_s));
        }
        if !(self.min_gaze_distance_deg.is_finite() && self.min_gaze_distance_deg > 0.0) {
            bad("min_gaze_distance_deg", "must be positive".into());
        }
        if !(self.dwell_s.is_finite() && self.dwell_s >= 0.0) {
            bad("dwell_s", "must be non-negative".into());
        } else if self.dwell_s >= self.t_max_s {
            bad("dwell_s", format!("must be below t_max_s ({})", self.t_max_s));
        }
        if self.n_init < 2 {
            bad("n_init", "must be at least 2".into());
        } else if self.n_init > self.n_stimuli {
            bad("n_init", format!("must not exceed n_stimuli ({})", self.n_stimuli));
        }
        if self.warmup_trials + self.n_init > self.n_stimuli {
            bad("warmup_trials", "warm-up plus initial design exceeds n_stimuli".into());
        }
        match self.stop {
            StopRule::FixedBudget { budget } => {
                if budget < self.n_init {
                    bad("stop.budget", format!("must be at least n_init ({})", self.n_init));
                }
            }
            StopRule::PosteriorConvergence { epsilon, patience } => {
                if !(epsilon.is_finite() && epsilon > 0.0) {
                    bad("stop.epsilon", "must be positive".into());
                }
                if patience == 0 {
                    bad("stop.patience", "must be positive".into());
                }
            }
        }
        if self.layout.is_empty() {
            bad("layout", "must contain at least one spawn point".into());
        } else if self.layout.len() < self.n_init {
            bad("layout", "fewer spawn points than n_init".into());
        }
        if !(0.0..0.5).contains(&self.layout.jitter_frac) {
            bad("layout.jitter_frac", "must lie in [0, 0.5)".into());
        }
        let t = &self.treatment;
        if !(t.threshold > 0.0 && t.threshold < 1.0) {
            bad("treatment.threshold", "must lie in (0, 1)".into());
        }
        if !(t.band_deg.is_finite() && t.band_deg > 0.0) {
            bad("treatment.band_deg", "must be positive".into());
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { fields })
        }
    }

    /// Session budget: the tighter of `n_stimuli` and a fixed-budget stop rule.
    pub fn budget(&self) -> usize {
        match self.stop {
            StopRule::FixedBudget { budget } => budget.min(self.n_stimuli),
            StopRule::PosteriorConvergence { .. } => self.n_stimuli,
        }
    }

    pub fn spawn_points(&self) -> Vec<SpawnPoint> {
        self.layout.generate(self.scene, self.seed)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// A single trial outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub spawn_id: u32,
    pub raw_time_s: f64,
    pub found: bool,
    pub y: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub warmup: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl Measurement {
    /// Builds a measurement, truncating anything at or beyond `t_max_s`.
    pub fn new(spawn_id: u32, raw_time_s: f64, found: bool, t_max_s: f64) -> Result<Self, DomainError> {
        let y = normalize_target(raw_time_s, found, t_max_s)?;
        let truncated = !found || raw_time_s > t_max_s;
        Ok(Self {
            spawn_id,
            raw_time_s: if truncated { t_max_s } else { raw_time_s },
            found: !truncated,
            y,
            warmup: false,
        })
    }
}

/// Maps a raw search time to the (0, 1] regression target.
pub fn normalize_target(raw_time_s: f64, found: bool, t_max_s: f64) -> Result<f64, DomainError> {
    if !(t_max_s.is_finite() && t_max_s > 0.0) {
        return Err(DomainError::InvalidMeasurement(format!("t_max_s must be positive, got {t_max_s}")));
    }
    if !raw_time_s.is_finite() || raw_time_s < 0.0 {
        return Err(DomainError::InvalidMeasurement(format!(
            "raw_time_s must be a non-negative number, got {raw_time_s}"
        )));
    }
    if !found {
        return Ok(1.0);
    }
    Ok((raw_time_s.min(t_max_s) / t_max_s).max(MIN_TARGET))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_target(30.0, false, 30.0).unwrap(), 1.0);
        assert_eq!(normalize_target(15.0, true, 30.0).unwrap(), 0.5);
        assert_eq!(normalize_target(0.0, true, 30.0).unwrap(), 0.001);
        assert_eq!(normalize_target(45.0, true, 30.0).unwrap(), 1.0);
    }

    #[test]
    fn normalize_rejects_bad_times() {
        assert!(matches!(normalize_target(-1.0, true, 30.0), Err(DomainError::InvalidMeasurement(_))));
        assert!(normalize_target(f64::NAN, true, 30.0).is_err());
        assert!(normalize_target(f64::INFINITY, false, 30.0).is_err());
        assert!(normalize_target(1.0, true, 0.0).is_err());
    }

    #[test]
    fn not_found_truncates() {
        let m = Measurement::new(3, 12.0, false, 30.0).unwrap();
        assert_eq!((m.raw_time_s, m.found, m.y), (30.0, false, 1.0));
        let late = Measurement::new(3, 31.0, true, 30.0).unwrap();
        assert_eq!((late.raw_time_s, late.found, late.y), (30.0, false, 1.0));
        let ok = Measurement::new(3, 6.0, true, 30.0).unwrap();
        assert_eq!((ok.raw_time_s, ok.found, ok.y), (6.0, true, 0.2));
    }

    #[test]
    fn scene_region_mapping_is_fixed() {
        assert_eq!(SceneId::Table.region(), Region::NearPeripersonal);
        assert_eq!(SceneId::Kitchen.region(), Region::FarPeripersonal);
        assert_eq!(SceneId::Playground.region(), Region::Extrapersonal);
    }

    #[test]
    fn default_layout_is_dense_and_in_bounds() {
        for scene in SceneId::ALL {
            let spawns = SpawnLayout::default().generate(scene, 11);
            assert_eq!(spawns.len(), 135);
            for (i, s) in spawns.iter().enumerate() {
                assert_eq!(s.id as usize, i);
                assert!(s.pos.in_bounds(), "{s:?}");
                assert_eq!(s.scene, scene);
            }
        }
    }

    #[test]
    fn layout_is_seeded() {
        let l = SpawnLayout::default();
        assert_eq!(l.generate(SceneId::Table, 5), l.generate(SceneId::Table, 5));
        assert_ne!(l.generate(SceneId::Table, 5), l.generate(SceneId::Table, 6));
    }

    #[test]
    fn default_config_is_valid() {
        SessionConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_reports_every_field() {
        let cfg = SessionConfig {
            n_init: 1,
            t_max_s: 5.0,
            dwell_s: 6.0,
            ..SessionConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        let names: Vec<_> = err.fields.iter().map(|f| f.field.as_str()).collect();
        assert!(names.contains(&"n_init"));
        assert!(names.contains(&"dwell_s"));
    }

    #[test]
    fn config_json_uses_listed_field_names() {
        let v = serde_json::to_value(SessionConfig::default()).unwrap();
        for key in [
            "mode", "scene", "n_stimuli", "t_max_s", "min_gaze_distance_deg", "difficulty",
            "dwell_s", "n_init", "init_strategy", "acquisition", "stop", "seed",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["acquisition"], "US");
        assert_eq!(v["stop"]["kind"], "FixedBudget");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: SessionConfig = serde_json::from_str(r#"{"scene":"Playground","seed":9}"#).unwrap();
        assert_eq!(cfg.scene, SceneId::Playground);
        assert_eq!(cfg.t_max_s, 30.0);
        assert_eq!(cfg.n_init, 5);
    }
}
