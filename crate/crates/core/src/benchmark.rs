//! Seeded RMSE-versus-budget comparison of sampling strategies against
//! simulated subjects.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active_learning::{init_design, InitStrategy, StopRule};
use crate::assessment::{EngineError, SessionState};
use crate::domain::{Acquisition, FovBounds, FovPoint, SessionConfig};
use crate::gp::{grid_points, FitOptions, GpModel};
use crate::rng::{derive_seed, tags};
use crate::subject_sim::{normalized_truth, NeglectField, SimulatedSubject};

/// Dense grid on which model error is measured.
pub const EVAL_GRID: (usize, usize) = (41, 25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Us,
    Ivr,
    Random,
    Grid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Us, Strategy::Ivr, Strategy::Random, Strategy::Grid];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Us => "us",
            Strategy::Ivr => "ivr",
            Strategy::Random => "random",
            Strategy::Grid => "grid",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "us" => Ok(Strategy::Us),
            "ivr" => Ok(Strategy::Ivr),
            "random" => Ok(Strategy::Random),
            "grid" => Ok(Strategy::Grid),
            other => Err(format!("unknown strategy {other:?} (expected us, ivr, random or grid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub profile: String,
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: u64,
    pub rmse: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub profiles: Vec<(String, NeglectField)>,
    pub strategies: Vec<Strategy>,
    /// Ascending, each at least `base.n_init`.
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Scene, layout, timing and initial design shared by every run.
    pub base: SessionConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("invalid benchmark: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Ground truth and evaluation points for one subject.
#[derive(Debug, Clone)]
pub struct Truth {
    pub points: Vec<FovPoint>,
    pub values: Vec<f64>,
}

impl Truth {
    pub fn new(field: &NeglectField, t_max_s: f64, difficulty: u32) -> Self {
        let points = grid_points(&FovBounds::FULL, EVAL_GRID.0, EVAL_GRID.1);
        let values = points.iter().map(|p| normalized_truth(field, p, t_max_s, difficulty)).collect();
        Self { points, values }
    }

    pub fn rmse(&self, model: &GpModel) -> f64 {
        let preds = model.predict_unchecked(&self.points);
        let sse: f64 = preds.iter().zip(&self.values).map(|(p, t)| (p.mean - t).powi(2)).sum();
        (sse / self.values.len() as f64).sqrt()
    }
}

/// Parses `a..b` (step 10), `a..b:step`, or a comma-separated list.
pub fn parse_budgets(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("bad budget spec {s:?}");
    let mut out: Vec<usize> = if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step.trim().parse::<usize>().map_err(|_| bad())?),
            None => (rest, 10),
        };
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if step == 0 || lo > hi {
            return Err(bad());
        }
        (lo..=hi).step_by(step).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

impl BenchmarkSpec {
    fn validate(&self) -> Result<(), BenchmarkError> {
        self.base.validate().map_err(|e| BenchmarkError::Invalid(e.to_string()))?;
        let n = self.base.layout.len();
        let min = self.base.n_init.max(2);
        match (self.budgets.first(), self.budgets.last()) {
            (Some(&lo), Some(&hi)) if lo >= min && hi <= n && self.budgets.windows(2).all(|w| w[0] < w[1]) => {}
            _ => return Err(BenchmarkError::Invalid(format!("budgets must be ascending within {min}..={n}"))),
        }
        if self.profiles.is_empty() || self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(BenchmarkError::Invalid("need at least one profile, strategy and seed".into()));
        }
        Ok(())
    }
}

/// Runs every (profile, strategy, seed) job; rows are sorted by
/// (profile, strategy, budget, seed) regardless of execution order.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<Vec<BenchmarkRow>, BenchmarkError> {
    spec.validate()?;
    let truths: Vec<Truth> = spec.profiles.iter().map(|(_, f)| Truth::new(f, spec.base.t_max_s, spec.base.difficulty)).collect();
    let jobs: Vec<(usize, Strategy, u64)> = (0..spec.profiles.len())
        .flat_map(|p| spec.strategies.iter().flat_map(move |&s| spec.seeds.iter().map(move |&seed| (p, s, seed))))
        .collect();
    let results: Result<Vec<Vec<BenchmarkRow>>, EngineError> = jobs
        .par_iter()
        .map(|&(p, strategy, seed)| {
            let (name, field) = &spec.profiles[p];
            let curve = run_curve(field, &truths[p], strategy, &spec.base, &spec.budgets, seed)?;
            Ok(curve
                .into_iter()
                .map(|(budget, rmse, wall_ms)| BenchmarkRow { profile: name.clone(), strategy, budget, seed, rmse, wall_ms })
                .collect())
        })
        .collect();
    let mut rows: Vec<BenchmarkRow> = results?.into_iter().flatten().collect();
    rows.sort_by(|a, b| (&a.profile, a.strategy, a.budget, a.seed).cmp(&(&b.profile, b.strategy, b.budget, b.seed)));
    Ok(rows)
}

/// RMSE after each budget for one strategy and seed, with elapsed milliseconds.
///
/// Adaptive strategies run a single session to the largest budget and read
/// the model at each checkpoint. Static designs are fitted from scratch per
/// budget; random designs are nested prefixes of one permutation.
pub fn run_curve(
    field: &NeglectField,
    truth: &Truth,
    strategy: Strategy,
    base: &SessionConfig,
    budgets: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64, f64)>, EngineError> {
    let max = *budgets.last().expect("budgets validated non-empty");
    let subject = SimulatedSubject::new(field.clone(), base.t_max_s, base.difficulty, seed);
    let mut out = Vec::with_capacity(budgets.len());
    let started = Instant::now();
    match strategy {
        Strategy::Us | Strategy::Ivr => {
            let acquisition = if strategy == Strategy::Us { Acquisition::Us } else { Acquisition::Ivr };
            let config = SessionConfig { seed, acquisition, n_stimuli: max, stop: StopRule::FixedBudget { budget: max }, warmup_trials: 0, ..base.clone() };
            let mut state = SessionState::new(format!("bench-{seed}"), config)?;
            let mut next = budgets.iter().peekable();
            while let Some(spawn) = state.next_stimulus(0)? {
                let trial = state.measurements.len();
                let m = subject.measure(&spawn, trial);
                state.submit_response(spawn.id, m.raw_time_s, m.found, 0)?;
                if next.peek() == Some(&&state.measurements.len()) {
                    let model = state.model.as_ref().expect("model exists once n_init is reached");
                    out.push((state.measurements.len(), truth.rmse(model), elapsed_ms(started)));
                    next.next();
                }
            }
        }
        Strategy::Random | Strategy::Grid => {
            let config = SessionConfig { seed, ..base.clone() };
            let spawns = config.spawn_points();
            let design_seed = derive_seed(seed, tags::INIT_DESIGN, 0);
            let order = if strategy == Strategy::Random { init_design(&spawns, max, InitStrategy::Random, design_seed)? } else { Vec::new() };
            for &b in budgets {
                let ids = if strategy == Strategy::Random { order[..b].to_vec() } else { init_design(&spawns, b, InitStrategy::Grid, design_seed)? };
                let (x, y): (Vec<FovPoint>, Vec<f64>) = ids
                    .iter()
                    .enumerate()
                    .map(|(trial, id)| {
                        let s = spawns.iter().find(|s| s.id == *id).expect("design ids come from the layout");
                        (s.pos, subject.measure(s, trial).y)
                    })
                    .unzip();
                let model = GpModel::fit(x, &y, &FitOptions::with_seed(derive_seed(seed, tags::FIT, b as u64)))?;
                out.push((b, truth.rmse(&model), elapsed_ms(started)));
            }
        }
    }
    Ok(out)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn rows_to_csv(rows: &[BenchmarkRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("profile,strategy,budget,seed,rmse,wall_ms\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:.6},{:.3}", r.profile, r.strategy, r.budget, r.seed, r.rmse, r.wall_ms);
    }
    out
}
