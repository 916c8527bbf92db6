//! Gaussian-process regression over the 2D field of view.
//!
//! Isotropic squared-exponential kernel over (azimuth, elevation) in
//! degrees, constant prior mean equal to the training-target mean, Gaussian
//! observation noise. Hyperparameters are fitted by maximizing the log
//! marginal likelihood with a box-constrained BFGS in log space.

mod optimize;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FovBounds, FovPoint};
use crate::rng::rng_from;

pub use optimize::BfgsOptions;

pub const FORMAT_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Diagonal jitter, relative to the signal variance, tried in order.
const JITTER_LADDER: [f64; 7] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
/// Signal variance used for a model fitted to constant targets.
pub const DEGENERATE_SIGMA_F2: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpError {
    #[error("need at least {needed} training points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("target #{index} = {value} is outside (0, 1]")]
    InvalidTarget { index: usize, value: f64 },
    #[error("{inputs} inputs but {targets} targets")]
    ShapeMismatch { inputs: usize, targets: usize },
    #[error("covariance factorization failed with jitter up to {jitter:e}")]
    Numerical { jitter: f64 },
    #[error("point ({azimuth_deg}, {elevation_deg}) lies outside the field of view")]
    OutOfDomain { azimuth_deg: f64, elevation_deg: f64 },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
}

/// Kernel and noise hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Signal variance (height scale).
    pub sigma_f2: f64,
    /// Length scale in degrees.
    pub length_scale: f64,
    /// Observation noise variance.
    pub sigma_eps2: f64,
}

impl Hyperparams {
    pub fn new(sigma_f2: f64, length_scale: f64, sigma_eps2: f64) -> Result<Self, GpError> {
        let h = Self { sigma_f2, length_scale, sigma_eps2 };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.sigma_f2) && ok(self.length_scale) && ok(self.sigma_eps2) {
            Ok(())
        } else {
            Err(GpError::InvalidHyperparams(format!(
                "all of sigma_f2={}, length_scale={}, sigma_eps2={} must be positive",
                self.sigma_f2, self.length_scale, self.sigma_eps2
            )))
        }
    }

    pub fn to_log(&self) -> [f64; 3] {
        [self.sigma_f2.ln(), self.length_scale.ln(), self.sigma_eps2.ln()]
    }

    pub fn from_log(v: &[f64; 3]) -> Self {
        Self { sigma_f2: v[0].exp(), length_scale: v[1].exp(), sigma_eps2: v[2].exp() }
    }
}

/// Squared-exponential covariance between two points.
pub fn kernel_se(a: &FovPoint, b: &FovPoint, theta: &Hyperparams) -> f64 {
    se_from_dist2(a.distance_sq(b), theta)
}

#[inline]
fn se_from_dist2(d2: f64, theta: &Hyperparams) -> f64 {
    theta.sigma_f2 * (-0.5 * d2 / (theta.length_scale * theta.length_scale)).exp()
}

fn pairwise_dist2(x: &[FovPoint]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| x[i].distance_sq(&x[j]))
}

fn cross_cov(x: &[FovPoint], q: &[FovPoint], theta: &Hyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), q.len(), |i, j| kernel_se(&x[i], &q[j], theta))
}

/// Cholesky of `K + (sigma_eps2 + jitter) I`, escalating the jitter on failure.
fn factorize(dist2: &DMatrix<f64>, theta: &Hyperparams) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = dist2.nrows();
    let kf = dist2.map(|d2| se_from_dist2(d2, theta));
    for rel in JITTER_LADDER {
        let jitter = rel * theta.sigma_f2;
        let mut ky = kf.clone();
        for i in 0..n {
            ky[(i, i)] += theta.sigma_eps2 + jitter;
        }
        if let Some(chol) = Cholesky::new(ky) {
            return Ok((chol, jitter));
        }
    }
    Err(GpError::Numerical { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * theta.sigma_f2 })
}

/// Log marginal likelihood and its gradient in log-hyperparameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lml {
    pub value: f64,
    /// d lml / d (log sigma_f2, log length_scale, log sigma_eps2).
    pub grad: [f64; 3],
}

pub fn log_marginal_likelihood(x: &[FovPoint], y: &[f64], theta: &Hyperparams) -> Result<Lml, GpError> {
    if x.len() != y.len() {
        return Err(GpError::ShapeMismatch { inputs: x.len(), targets: y.len() });
    }
    if x.is_empty() {
        return Err(GpError::InsufficientData { needed: 1, got: 0 });
    }
    theta.validate()?;
    lml_with_dist(&pairwise_dist2(x), &DVector::from_column_slice(y), theta)
}

fn lml_with_dist(dist2: &DMatrix<f64>, y: &DVector<f64>, theta: &Hyperparams) -> Result<Lml, GpError> {
    let n = y.len();
    let (chol, jitter) = factorize(dist2, theta)?;
    let alpha = chol.solve(y);
    let l = chol.l_dirty();
    let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let value = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    // grad_k = 1/2 tr((alpha alpha^T - K^-1) dK/dlog(theta_k))
    let kinv = chol.inverse();
    let inv_l2 = 1.0 / (theta.length_scale * theta.length_scale);
    let (mut g_f, mut g_l, mut diag_w) = (0.0, 0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let d2 = dist2[(i, j)];
            let kf = se_from_dist2(d2, theta);
            g_f += w * kf;
            g_l += w * kf * d2 * inv_l2;
        }
        diag_w += alpha[j] * alpha[j] - kinv[(j, j)];
    }
    // The jitter scales with sigma_f2, so it contributes to that derivative.
    let grad = [0.5 * (g_f + jitter * diag_w), 0.5 * g_l, 0.5 * theta.sigma_eps2 * diag_w];
    Ok(Lml { value, grad })
}

/// Mean and variance of the latent function at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
    pub two_sigma: f64,
}

impl PosteriorPrediction {
    fn new(mean: f64, variance: f64) -> Self {
        let variance = variance.max(0.0);
        Self { mean, variance, two_sigma: 2.0 * variance.sqrt() }
    }
}

/// Search ranges and box constraints for hyperparameter fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Extra starting point tried before the random restarts.
    pub initial: Option<Hyperparams>,
    pub restarts: usize,
    pub seed: u64,
    /// Log-uniform ranges the restart points are drawn from.
    pub init_low: Hyperparams,
    pub init_high: Hyperparams,
    /// Box the optimizer may not leave.
    pub lower: Hyperparams,
    pub upper: Hyperparams,
    pub bfgs: BfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            initial: None,
            restarts: 5,
            seed: 0,
            init_low: Hyperparams { sigma_f2: 0.01, length_scale: 2.0, sigma_eps2: 1e-4 },
            init_high: Hyperparams { sigma_f2: 4.0, length_scale: 40.0, sigma_eps2: 0.25 },
            lower: Hyperparams { sigma_f2: DEGENERATE_SIGMA_F2, length_scale: 0.5, sigma_eps2: 1e-6 },
            upper: Hyperparams { sigma_f2: 100.0, length_scale: 200.0, sigma_eps2: 10.0 },
            bfgs: BfgsOptions::default(),
        }
    }
}

impl FitOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn validate(&self) -> Result<(), GpError> {
        if let Some(h) = &self.initial {
            h.validate()?;
        }
        for h in [&self.init_low, &self.init_high, &self.lower, &self.upper] {
            h.validate()?;
        }
        Ok(())
    }
}

/// A trained Gaussian-process surrogate. Immutable once built.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "PersistedModel", try_from = "PersistedModel")]
pub struct GpModel {
    x: Vec<FovPoint>,
    y_centered: DVector<f64>,
    y_mean: f64,
    theta: Hyperparams,
    jitter: f64,
    /// Lower Cholesky factor of K + (sigma_eps2 + jitter) I.
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x
            && self.y_centered == other.y_centered
            && self.y_mean == other.y_mean
            && self.theta == other.theta
    }
}

impl GpModel {
    /// A model with no training data.
    pub fn prior(theta: Hyperparams, y_mean: f64) -> Result<Self, GpError> {
        Self::from_centered(Vec::new(), Vec::new(), y_mean, theta)
    }

    /// Conditions on `(x, y)` with fixed hyperparameters, centering `y` by its mean.
    pub fn with_hyperparams(x: Vec<FovPoint>, y: &[f64], theta: Hyperparams) -> Result<Self, GpError> {
        if x.len() != y.len() {
            return Err(GpError::ShapeMismatch { inputs: x.len(), targets: y.len() });
        }
        let (mean, centered) = center(y);
        Self::from_centered(x, centered, mean, theta)
    }

    pub fn from_centered(x: Vec<FovPoint>, y_centered: Vec<f64>, y_mean: f64, theta: Hyperparams) -> Result<Self, GpError> {
        theta.validate()?;
        if x.len() != y_centered.len() {
            return Err(GpError::ShapeMismatch { inputs: x.len(), targets: y_centered.len() });
        }
        let y_centered = DVector::from_vec(y_centered);
        if x.is_empty() {
            return Ok(Self {
                x,
                y_centered,
                y_mean,
                theta,
                jitter: 0.0,
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
            });
        }
        let (chol, jitter) = factorize(&pairwise_dist2(&x), &theta)?;
        let alpha = chol.solve(&y_centered);
        let l = chol.unpack();
        Ok(Self { x, y_centered, y_mean, theta, jitter, chol: l, alpha })
    }

    pub fn inputs(&self) -> &[FovPoint] {
        &self.x
    }

    pub fn y_centered(&self) -> &[f64] {
        self.y_centered.as_slice()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    /// Training targets in their original (uncentered) units.
    pub fn targets(&self) -> Vec<f64> {
        self.y_centered.iter().map(|v| v + self.y_mean).collect()
    }

    pub fn theta(&self) -> &Hyperparams {
        &self.theta
    }

    /// Absolute diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Noise variance on the factorized diagonal, jitter included.
    pub fn effective_noise(&self) -> f64 {
        self.theta.sigma_eps2 + self.jitter
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        self.alpha.as_slice()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn log_marginal_likelihood(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let n = self.len();
        let log_det_half: f64 = (0..n).map(|i| self.chol[(i, i)].ln()).sum();
        Some(-0.5 * self.y_centered.dot(&self.alpha) - log_det_half - 0.5 * n as f64 * LN_2PI)
    }

    /// `L^-1 K(X, pts)`; column `j` is the whitened covariance of `pts[j]`.
    pub fn whitened_cross_covariance(&self, pts: &[FovPoint]) -> DMatrix<f64> {
        let k = cross_cov(&self.x, pts, &self.theta);
        if self.is_empty() {
            return k;
        }
        self.chol
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Posterior covariance matrix between two point sets.
    pub fn posterior_covariance(&self, a: &[FovPoint], b: &[FovPoint]) -> DMatrix<f64> {
        let prior = DMatrix::from_fn(a.len(), b.len(), |i, j| kernel_se(&a[i], &b[j], &self.theta));
        if self.is_empty() {
            return prior;
        }
        let va = self.whitened_cross_covariance(a);
        let vb = self.whitened_cross_covariance(b);
        prior - va.transpose() * vb
    }

    /// Posterior mean and variance at each query.
    pub fn predict(&self, queries: &[FovPoint]) -> Result<Vec<PosteriorPrediction>, GpError> {
        if let Some(q) = queries.iter().find(|q| !q.in_bounds()) {
            return Err(GpError::OutOfDomain { azimuth_deg: q.azimuth_deg, elevation_deg: q.elevation_deg });
        }
        Ok(self.predict_unchecked(queries))
    }

    pub fn predict_one(&self, query: &FovPoint) -> Result<PosteriorPrediction, GpError> {
        Ok(self.predict(std::slice::from_ref(query))?[0])
    }

    pub(crate) fn predict_unchecked(&self, queries: &[FovPoint]) -> Vec<PosteriorPrediction> {
        let sf2 = self.theta.sigma_f2;
        if self.is_empty() {
            return queries.iter().map(|_| PosteriorPrediction::new(self.y_mean, sf2)).collect();
        }
        let kstar = cross_cov(&self.x, queries, &self.theta);
        let mean = kstar.tr_mul(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kstar)
            .expect("cholesky factor has a positive diagonal");
        (0..queries.len())
            .map(|j| {
                let reduction = v.column(j).norm_squared();
                PosteriorPrediction::new(self.y_mean + mean[j], sf2 - reduction)
            })
            .collect()
    }

    /// Fits hyperparameters to normalized targets in (0, 1].
    pub fn fit(x: Vec<FovPoint>, y: &[f64], opts: &FitOptions) -> Result<Self, GpError> {
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0 && **v <= 1.0)) {
            return Err(GpError::InvalidTarget { index, value });
        }
        if let Some(p) = x.iter().find(|p| !p.in_bounds()) {
            return Err(GpError::OutOfDomain { azimuth_deg: p.azimuth_deg, elevation_deg: p.elevation_deg });
        }
        Self::fit_targets(x, y, opts)
    }

    /// Like [`GpModel::fit`] but accepts any finite targets.
    pub fn fit_targets(x: Vec<FovPoint>, y: &[f64], opts: &FitOptions) -> Result<Self, GpError> {
        opts.validate()?;
        if x.len() != y.len() {
            return Err(GpError::ShapeMismatch { inputs: x.len(), targets: y.len() });
        }
        if x.len() < 2 {
            return Err(GpError::InsufficientData { needed: 2, got: x.len() });
        }
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GpError::InvalidTarget { index, value });
        }
        let (mean, centered) = center(y);
        let spread = centered.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if spread <= 1e-12 * mean.abs().max(1.0) {
            let start = opts.initial.unwrap_or(Hyperparams { sigma_f2: 1.0, length_scale: 10.0, sigma_eps2: 1e-4 });
            let theta = Hyperparams { sigma_f2: DEGENERATE_SIGMA_F2, ..start };
            return Self::from_centered(x, vec![0.0; centered.len()], mean, theta);
        }

        let theta = optimize_hyperparams(&x, &centered, opts)?;
        Self::from_centered(x, centered, mean, theta)
    }
}

fn center(y: &[f64]) -> (f64, Vec<f64>) {
    if y.is_empty() {
        return (0.0, Vec::new());
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    (mean, y.iter().map(|v| v - mean).collect())
}

fn optimize_hyperparams(x: &[FovPoint], y_centered: &[f64], opts: &FitOptions) -> Result<Hyperparams, GpError> {
    let dist2 = pairwise_dist2(x);
    let y = DVector::from_column_slice(y_centered);
    let lo = opts.lower.to_log();
    let hi = opts.upper.to_log();
    let init_lo = opts.init_low.to_log();
    let init_hi = opts.init_high.to_log();

    let mut starts: Vec<[f64; 3]> = opts.initial.iter().map(Hyperparams::to_log).collect();
    let mut rng = rng_from(opts.seed);
    for _ in 0..opts.restarts {
        starts.push(std::array::from_fn(|i| rng.random_range(init_lo[i]..=init_hi[i])));
    }

    let objective = |v: &[f64; 3]| {
        let theta = Hyperparams::from_log(v);
        lml_with_dist(&dist2, &y, &theta).ok().map(|l| (-l.value, l.grad.map(|g| -g)))
    };

    let mut best: Option<(f64, [f64; 3])> = None;
    for s in starts {
        if let Some(m) = optimize::minimize(objective, s, lo, hi, &opts.bfgs) {
            // Strict comparison keeps the earliest start on ties.
            if best.is_none_or(|(f, _)| m.f < f) {
                best = Some((m.f, m.x));
            }
        }
    }
    match best {
        Some((_, v)) => Ok(Hyperparams::from_log(&v)),
        None => Err(GpError::Numerical { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] }),
    }
}

/// On-disk representation; the factorization is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistedModel {
    pub theta: Hyperparams,
    pub y_mean: f64,
    #[serde(rename = "X")]
    pub x: Vec<[f64; 2]>,
    pub y_centered: Vec<f64>,
    pub format_version: u32,
}

impl From<GpModel> for PersistedModel {
    fn from(m: GpModel) -> Self {
        Self {
            theta: m.theta,
            y_mean: m.y_mean,
            x: m.x.iter().map(|p| [p.azimuth_deg, p.elevation_deg]).collect(),
            y_centered: m.y_centered.as_slice().to_vec(),
            format_version: FORMAT_VERSION,
        }
    }
}

impl TryFrom<PersistedModel> for GpModel {
    type Error = GpError;

    fn try_from(p: PersistedModel) -> Result<Self, GpError> {
        if p.format_version != FORMAT_VERSION {
            return Err(GpError::UnsupportedVersion(p.format_version));
        }
        let x = p.x.iter().map(|[a, e]| FovPoint::new(*a, *e)).collect();
        Self::from_centered(x, p.y_centered, p.y_mean, p.theta)
    }
}

/// Cell-center grid over `bounds`, row 0 at the top (highest elevation).
pub fn grid_points(bounds: &FovBounds, nx: usize, ny: usize) -> Vec<FovPoint> {
    let dx = bounds.width() / nx as f64;
    let dy = bounds.height() / ny as f64;
    let mut pts = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        let el = bounds.el_max - (r as f64 + 0.5) * dy;
        for c in 0..nx {
            pts.push(FovPoint::new(bounds.az_min + (c as f64 + 0.5) * dx, el));
        }
    }
    pts
}
