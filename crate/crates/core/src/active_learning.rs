//! Initial designs, acquisition functions and stopping rules.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FovBounds, FovPoint, SpawnPoint};
use crate::gp::{GpError, GpModel};
use crate::rng::rng_from;

/// Grid on which posterior-mean snapshots are compared for convergence.
pub const SNAPSHOT_GRID: (usize, usize) = (31, 19);
/// Hyperparameters are re-optimized on every refit up to this many points.
pub const ALWAYS_REOPTIMIZE_UP_TO: usize = 15;
/// Past [`ALWAYS_REOPTIMIZE_UP_TO`], re-optimize every this many refits.
pub const REOPTIMIZE_EVERY: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcquisitionError {
    #[error("no candidate spawn points left")]
    NoCandidates,
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitStrategy {
    Random,
    Grid,
    LatinHypercube,
    Sobol,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StopRule {
    FixedBudget { budget: usize },
    PosteriorConvergence { epsilon: f64, patience: usize },
}

impl StopRule {
    pub fn convergence() -> Self {
        StopRule::PosteriorConvergence { epsilon: 0.02, patience: 2 }
    }
}

/// Outcome of one acquisition step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub chosen: u32,
    pub scores: BTreeMap<u32, f64>,
}

impl AcquisitionResult {
    /// Maximal score, ties broken by the lowest id.
    fn from_scores(scores: BTreeMap<u32, f64>) -> Result<Self, AcquisitionError> {
        let mut best: Option<(u32, f64)> = None;
        // BTreeMap iterates ids in ascending order, so `>` keeps the lowest id on ties.
        for (&id, &s) in &scores {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((id, s));
            }
        }
        let (chosen, _) = best.ok_or(AcquisitionError::NoCandidates)?;
        Ok(Self { chosen, scores })
    }
}

/// Picks `n0` distinct spawn ids to measure before the first fit.
pub fn init_design(spawns: &[SpawnPoint], n0: usize, strategy: InitStrategy, seed: u64) -> Result<Vec<u32>, AcquisitionError> {
    if n0 == 0 || n0 > spawns.len() {
        return Err(AcquisitionError::Precondition(format!(
            "initial design size {n0} must lie in 1..={}",
            spawns.len()
        )));
    }
    let mut rng = rng_from(seed);
    let bounds = FovBounds::FULL;
    let design: Vec<FovPoint> = match strategy {
        InitStrategy::Random => {
            let mut idx: Vec<usize> = (0..spawns.len()).collect();
            idx.shuffle(&mut rng);
            return Ok(idx[..n0].iter().map(|&i| spawns[i].id).collect());
        }
        InitStrategy::Grid => grid_design(&bounds, n0),
        InitStrategy::LatinHypercube => latin_hypercube(n0, &mut rng)
            .into_iter()
            .map(|[u, v]| to_fov(&bounds, u, v))
            .collect(),
        InitStrategy::Sobol => {
            let shift = [rng.random::<u32>(), rng.random::<u32>()];
            (0..n0 as u32)
                .map(|i| {
                    let [u, v] = sobol_2d(i, shift);
                    to_fov(&bounds, u, v)
                })
                .collect()
        }
    };
    Ok(snap_to_spawns(&design, spawns))
}

fn to_fov(b: &FovBounds, u: f64, v: f64) -> FovPoint {
    FovPoint::new(b.az_min + u * b.width(), b.el_min + v * b.height())
}

/// Cell centers of the `cols x rows` grid that best fits `n` points with
/// the rectangle's aspect ratio; row-major from the bottom, truncated to `n`.
pub fn grid_design(b: &FovBounds, n: usize) -> Vec<FovPoint> {
    let aspect = b.width() / b.height();
    let (mut cols, mut rows, mut best) = (n, 1, f64::INFINITY);
    for c in 1..=n {
        let r = n.div_ceil(c);
        let waste = (c * r - n) as f64 / n as f64;
        let cost = waste + ((c as f64 / r as f64) / aspect).ln().abs();
        if cost < best {
            (cols, rows, best) = (c, r, cost);
        }
    }
    let mut pts = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            pts.push(to_fov(b, (c as f64 + 0.5) / cols as f64, (r as f64 + 0.5) / rows as f64));
        }
    }
    pts.truncate(n);
    pts
}

/// `n` points in the unit square, one per row and column stratum.
pub fn latin_hypercube<R: Rng>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut perms: [Vec<usize>; 2] = [(0..n).collect(), (0..n).collect()];
    for p in &mut perms {
        p.shuffle(rng);
    }
    (0..n)
        .map(|i| {
            std::array::from_fn(|d| (perms[d][i] as f64 + rng.random::<f64>()) / n as f64)
        })
        .collect()
}

/// Point `index` of the two-dimensional Sobol sequence with a digital shift.
///
/// The first dimension is the base-2 radical inverse; the second uses the
/// primitive polynomial `x + 1` with initial direction number 1.
pub fn sobol_2d(index: u32, shift: [u32; 2]) -> [f64; 2] {
    let mut acc = shift;
    let mut m: u32 = 1;
    for k in 0..32 {
        if k > 0 {
            m ^= m << 1;
        }
        if index >> k & 1 == 1 {
            acc[0] ^= 1 << (31 - k);
            acc[1] ^= m << (31 - k);
        }
    }
    acc.map(|a| a as f64 / 4_294_967_296.0)
}

/// Maps each design point, in order, to the nearest spawn not yet taken.
pub fn snap_to_spawns(design: &[FovPoint], spawns: &[SpawnPoint]) -> Vec<u32> {
    let mut used = vec![false; spawns.len()];
    let mut out = Vec::with_capacity(design.len());
    for p in design {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in spawns.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = p.distance_sq(&s.pos);
            let better = match best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && s.id < spawns[bi].id),
            };
            if better {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            out.push(spawns[i].id);
        }
    }
    out
}

/// Uncertainty sampling: the candidate with the largest posterior variance.
pub fn acquire_us(model: &GpModel, candidates: &[SpawnPoint]) -> Result<AcquisitionResult, AcquisitionError> {
    if candidates.is_empty() {
        return Err(AcquisitionError::NoCandidates);
    }
    let pts: Vec<FovPoint> = candidates.iter().map(|s| s.pos).collect();
    let preds = model.predict(&pts)?;
    let scores = candidates.iter().zip(preds).map(|(s, p)| (s.id, p.variance)).collect();
    AcquisitionResult::from_scores(scores)
}

/// Integrated variance reduction over `evaluation`.
///
/// Adding an observation at `c` lowers the posterior variance at `e` by
/// `k_post(e, c)^2 / (k_post(c, c) + noise)`; the score is that reduction
/// summed over the evaluation set.
pub fn acquire_ivr(
    model: &GpModel,
    candidates: &[SpawnPoint],
    evaluation: &[SpawnPoint],
) -> Result<AcquisitionResult, AcquisitionError> {
    if candidates.is_empty() || evaluation.is_empty() {
        return Err(AcquisitionError::NoCandidates);
    }
    let cand: Vec<FovPoint> = candidates.iter().map(|s| s.pos).collect();
    let eval: Vec<FovPoint> = evaluation.iter().map(|s| s.pos).collect();
    if let Some(p) = cand.iter().chain(&eval).find(|p| !p.in_bounds()) {
        return Err(GpError::OutOfDomain { azimuth_deg: p.azimuth_deg, elevation_deg: p.elevation_deg }.into());
    }
    let cross = model.posterior_covariance(&eval, &cand);
    let var_c = model.predict_unchecked(&cand);
    let noise = model.effective_noise();
    let scores = candidates
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let num: f64 = cross.column(j).iter().map(|k| k * k).sum();
            (s.id, num / (var_c[j].variance + noise))
        })
        .collect();
    AcquisitionResult::from_scores(scores)
}

/// Whether the active-learning loop should end.
///
/// `history` holds posterior-mean snapshots on a fixed grid, oldest first.
pub fn should_stop(history: &[Vec<f64>], rule: &StopRule, n_measured: usize) -> bool {
    match *rule {
        StopRule::FixedBudget { budget } => n_measured >= budget,
        StopRule::PosteriorConvergence { epsilon, patience } => {
            if patience == 0 || history.len() < patience + 1 {
                return false;
            }
            history[history.len() - patience - 1..].windows(2).all(|w| max_abs_diff(&w[0], &w[1]) < epsilon)
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Whether the refit after the `n`-th model measurement re-optimizes
/// hyperparameters rather than reusing the previous ones.
pub fn should_reoptimize(n: usize) -> bool {
    n <= ALWAYS_REOPTIMIZE_UP_TO || (n - ALWAYS_REOPTIMIZE_UP_TO) % REOPTIMIZE_EVERY == 0
}
