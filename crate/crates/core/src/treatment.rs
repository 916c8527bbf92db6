//! Border extraction and cue scheduling for treatment sessions.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FovBounds, FovPoint, SpawnPoint};
use crate::gp::GpModel;
use crate::heatmap::{default_mask_threshold, evaluate_grid, Heatmap};
use crate::rng::rng_from;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Extraction grid, twice as fine as the display heatmap.
pub const DEFAULT_RESOLUTION: (usize, usize) = (61, 37);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreatmentError {
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("extraction grid must be at least 2x2")]
    InvalidResolution,
    #[error("border set is empty")]
    EmptyBorder,
    #[error("no unused spawn point within {band_deg} deg of the border")]
    NoCueAvailable { band_deg: f64 },
    #[error("no session has a non-empty border")]
    NoBorder,
}

/// Points where the posterior mean crosses the neglect threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderSet {
    pub points: Vec<FovPoint>,
    pub threshold: f64,
    pub session_ref: String,
}

impl BorderSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_azimuth(&self) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().map(|p| p.azimuth_deg).sum::<f64>() / self.points.len() as f64)
    }

    /// Distance from `p` to the nearest border point.
    pub fn distance_to(&self, p: &FovPoint) -> f64 {
        self.points.iter().map(|b| b.distance_sq(p)).fold(f64::INFINITY, f64::min).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BorderOptions {
    pub bounds: FovBounds,
    pub nx: usize,
    pub ny: usize,
    /// Two-sigma cut-off for excluding cells; `None` uses the heatmap default.
    pub mask_threshold: Option<f64>,
}

impl Default for BorderOptions {
    fn default() -> Self {
        Self { bounds: FovBounds::FULL, nx: DEFAULT_RESOLUTION.0, ny: DEFAULT_RESOLUTION.1, mask_threshold: None }
    }
}

pub fn extract_border(model: &GpModel, threshold: f64, session_ref: &str, opts: &BorderOptions) -> Result<BorderSet, TreatmentError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TreatmentError::InvalidThreshold(threshold));
    }
    let mask = opts.mask_threshold.unwrap_or_else(|| default_mask_threshold(model));
    let h = evaluate_grid(model, &opts.bounds, opts.nx, opts.ny, mask).map_err(|_| TreatmentError::InvalidResolution)?;
    Ok(BorderSet { points: border_points(&h, threshold), threshold, session_ref: session_ref.to_string() })
}

/// Marching squares on the heatmap mean, one point per crossed grid edge.
///
/// An edge is used only if at least one of the cells it bounds has no masked
/// corner. Points come out in row-major edge order.
pub fn border_points(h: &Heatmap, threshold: f64) -> Vec<FovPoint> {
    let (nx, ny) = (h.nx, h.ny);
    // Cell (r, c) spans grid nodes r..=r+1, c..=c+1.
    let clean = |r: usize, c: usize| -> bool {
        r + 1 < ny && c + 1 < nx && !(h.mask[h.index(r, c)] || h.mask[h.index(r + 1, c)] || h.mask[h.index(r, c + 1)] || h.mask[h.index(r + 1, c + 1)])
    };
    let node = |r: usize, c: usize| {
        let (az, el) = h.cell_center(r, c);
        (FovPoint::new(az, el), h.mean[h.index(r, c)])
    };
    let mut out = Vec::new();
    let mut crossing = |a: (FovPoint, f64), b: (FovPoint, f64)| {
        if (a.1 >= threshold) != (b.1 >= threshold) {
            let t = (threshold - a.1) / (b.1 - a.1);
            out.push(FovPoint::new(
                a.0.azimuth_deg + t * (b.0.azimuth_deg - a.0.azimuth_deg),
                a.0.elevation_deg + t * (b.0.elevation_deg - a.0.elevation_deg),
            ));
        }
    };
    for r in 0..ny {
        for c in 0..nx {
            // Horizontal edge to the right: bounds cells (r-1, c) and (r, c).
            if c + 1 < nx && ((r > 0 && clean(r - 1, c)) || clean(r, c)) {
                crossing(node(r, c), node(r, c + 1));
            }
            // Vertical edge downward: bounds cells (r, c-1) and (r, c).
            if r + 1 < ny && ((c > 0 && clean(r, c - 1)) || clean(r, c)) {
                crossing(node(r, c), node(r + 1, c));
            }
        }
    }
    out
}

/// Picks a cue uniformly among spawns within `band_deg` of the border,
/// skipping any id in `history`.
pub fn next_cue(border: &BorderSet, spawns: &[SpawnPoint], band_deg: f64, history: &[u32], seed: u64) -> Result<SpawnPoint, TreatmentError> {
    if border.is_empty() {
        return Err(TreatmentError::EmptyBorder);
    }
    let eligible: Vec<&SpawnPoint> = spawns
        .iter()
        .filter(|s| !history.contains(&s.id) && border.distance_to(&s.pos) <= band_deg)
        .collect();
    if eligible.is_empty() {
        return Err(TreatmentError::NoCueAvailable { band_deg });
    }
    let k = rng_from(seed).random_range(0..eligible.len());
    Ok(*eligible[k])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderShiftRow {
    pub session_id: String,
    pub mean_border_az_deg: Option<f64>,
    /// Change from the previous session; positive means the border moved right.
    pub delta_deg: Option<f64>,
}

pub fn border_shift(sessions: &[BorderSet]) -> Result<Vec<BorderShiftRow>, TreatmentError> {
    if sessions.iter().all(BorderSet::is_empty) {
        return Err(TreatmentError::NoBorder);
    }
    let mut prev: Option<f64> = None;
    let mut rows = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let mean = s.mean_azimuth();
        let delta = match (i, prev, mean) {
            (0, _, _) => None,
            (_, Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        rows.push(BorderShiftRow { session_id: s.session_ref.clone(), mean_border_az_deg: mean, delta_deg: delta });
        prev = mean;
    }
    Ok(rows)
}

pub fn border_shift_csv(rows: &[BorderShiftRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("session_id,mean_border_az_deg,delta_deg\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.session_id, opt(r.mean_border_az_deg), opt(r.delta_deg));
    }
    out
}
