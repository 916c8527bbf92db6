//! Simulated subjects with a known ground-truth search-time field.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::assessment::{Responder, ResponderError, Response};
use crate::domain::{FovPoint, Measurement, SpawnPoint, AZIMUTH_LIMIT_DEG};
use crate::rng::{derive_seed, rng_from, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    None,
    /// Slow to the left of `border_azimuth_deg`.
    HemifieldSigmoid,
    /// Linearly slower towards the left edge.
    LinearGradient,
    /// Isolated Gaussian patches of slow search.
    PatchyBlob,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: FovPoint,
    pub radius_deg: f64,
    pub severity: f64,
}

/// Parametric ground truth for a simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeglectField {
    pub profile: Profile,
    pub base_time_s: f64,
    pub border_azimuth_deg: f64,
    pub steepness_deg: f64,
    /// 0 = unaffected, 1 = affected regions approach `t_max`.
    pub severity: f64,
    /// Used by [`Profile::PatchyBlob`] only; `severity` is ignored there.
    pub blobs: Vec<Blob>,
    /// Coefficient of variation of the multiplicative response noise.
    pub noise_cv: f64,
}

impl Default for NeglectField {
    fn default() -> Self {
        Self {
            profile: Profile::None,
            base_time_s: 3.0,
            border_azimuth_deg: 0.0,
            steepness_deg: 5.0,
            severity: 0.0,
            blobs: Vec::new(),
            noise_cv: 0.25,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("invalid neglect field: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

impl NeglectField {
    pub fn hemifield(border_azimuth_deg: f64, severity: f64) -> Self {
        Self { profile: Profile::HemifieldSigmoid, border_azimuth_deg, severity, ..Self::default() }
    }

    pub fn uniform(base_time_s: f64) -> Self {
        Self { base_time_s, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: &str| Err(FieldError::Invalid(m.to_string()));
        if !(self.base_time_s.is_finite() && self.base_time_s > 0.0) {
            return bad("base_time_s must be positive");
        }
        if !(0.0..=1.0).contains(&self.severity) {
            return bad("severity must lie in [0, 1]");
        }
        if !(self.steepness_deg.is_finite() && self.steepness_deg > 0.0) {
            return bad("steepness_deg must be positive");
        }
        if !(self.noise_cv.is_finite() && self.noise_cv >= 0.0) {
            return bad("noise_cv must be non-negative");
        }
        for b in &self.blobs {
            if !(b.radius_deg > 0.0 && (0.0..=1.0).contains(&b.severity)) {
                return bad("blobs need a positive radius and severity in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FieldError::Io { path: path.display().to_string(), source })?;
        let field: Self = serde_json::from_str(&text).map_err(|source| FieldError::Parse { path: path.display().to_string(), source })?;
        field.validate()?;
        Ok(field)
    }

    /// Fraction of the way from `base_time_s` to `t_max_s` at `p`, in [0, 1].
    fn impairment(&self, p: &FovPoint) -> f64 {
        match self.profile {
            Profile::None => 0.0,
            Profile::HemifieldSigmoid => self.severity * logistic((self.border_azimuth_deg - p.azimuth_deg) / self.steepness_deg),
            Profile::LinearGradient => {
                let frac = (AZIMUTH_LIMIT_DEG - p.azimuth_deg) / (2.0 * AZIMUTH_LIMIT_DEG);
                self.severity * frac.clamp(0.0, 1.0)
            }
            Profile::PatchyBlob => {
                let spared: f64 = self
                    .blobs
                    .iter()
                    .map(|b| 1.0 - b.severity * (-0.5 * p.distance_sq(&b.center) / (b.radius_deg * b.radius_deg)).exp())
                    .product();
                1.0 - spared
            }
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Multiplier applied to expected search time for `difficulty` distractors.
pub fn difficulty_factor(difficulty: u32) -> f64 {
    1.0 + 0.1 * difficulty as f64
}

/// Mean search time at `p`, always within `[base_time_s, t_max_s]`.
pub fn expected_time(field: &NeglectField, p: &FovPoint, t_max_s: f64) -> f64 {
    let base = field.base_time_s.min(t_max_s);
    base + field.impairment(p) * (t_max_s - base)
}

/// Ground truth in normalized-target units, including the distractor load.
pub fn normalized_truth(field: &NeglectField, p: &FovPoint, t_max_s: f64, difficulty: u32) -> f64 {
    (expected_time(field, p, t_max_s) * difficulty_factor(difficulty)).min(t_max_s) / t_max_s
}

/// One simulated trial with no distractors.
pub fn respond(field: &NeglectField, spawn: &SpawnPoint, t_max_s: f64, rng_seed: u64) -> Measurement {
    respond_with_difficulty(field, spawn, t_max_s, 0, rng_seed)
}

/// One simulated trial: log-normal noise with unit mean around the expected time.
pub fn respond_with_difficulty(field: &NeglectField, spawn: &SpawnPoint, t_max_s: f64, difficulty: u32, rng_seed: u64) -> Measurement {
    let mean = expected_time(field, &spawn.pos, t_max_s) * difficulty_factor(difficulty);
    let mut rng = rng_from(rng_seed);
    let noise = if field.noise_cv > 0.0 {
        let sigma2 = (1.0 + field.noise_cv * field.noise_cv).ln();
        LogNormal::new(-0.5 * sigma2, sigma2.sqrt()).expect("finite parameters").sample(&mut rng)
    } else {
        // Keep the stream position independent of the noise level.
        let _: f64 = rng.random();
        1.0
    };
    let time = mean * noise;
    let found = time < t_max_s;
    Measurement::new(spawn.id, if found { time } else { t_max_s }, found, t_max_s).expect("simulated times are finite and positive")
}

/// A [`Responder`] backed by a [`NeglectField`].
///
/// The response to trial `k` depends only on `(seed, k)` and the spawn point,
/// so interrupted and resumed sessions see the same answers.
#[derive(Debug, Clone)]
pub struct SimulatedSubject {
    pub field: NeglectField,
    pub t_max_s: f64,
    pub difficulty: u32,
    pub seed: u64,
}

impl SimulatedSubject {
    pub fn new(field: NeglectField, t_max_s: f64, difficulty: u32, seed: u64) -> Self {
        Self { field, t_max_s, difficulty, seed }
    }

    pub fn measure(&self, spawn: &SpawnPoint, trial: usize) -> Measurement {
        let seed = derive_seed(self.seed, tags::RESPONSE, trial as u64);
        respond_with_difficulty(&self.field, spawn, self.t_max_s, self.difficulty, seed)
    }
}

impl Responder for SimulatedSubject {
    fn respond(&mut self, spawn: &SpawnPoint, trial: usize) -> Result<Response, ResponderError> {
        let m = self.measure(spawn, trial);
        Ok(Response { raw_time_s: m.raw_time_s, found: m.found })
    }
}
