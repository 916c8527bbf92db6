//! Box-constrained BFGS for small, smooth problems.
//!
//! Used to maximize the log marginal likelihood over the three
//! log-hyperparameters. The inverse-Hessian approximation is dense; the
//! iterate is projected back onto the box after every step and components
//! pinned at an active bound are frozen for the search direction.

pub const DIM: usize = 3;

pub type Vector = [f64; DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub f_rel_tol: f64,
    /// Largest step (infinity norm) taken by a single line search trial.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iters: 100, grad_tol: 1e-6, f_rel_tol: 1e-10, max_step: 2.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub x: Vector,
    pub f: f64,
}

fn dot(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut Vector, lo: &Vector, hi: &Vector) {
    for i in 0..DIM {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Components that sit on a bound with the gradient pushing outward.
fn active_set(x: &Vector, g: &Vector, lo: &Vector, hi: &Vector) -> [bool; DIM] {
    let mut a = [false; DIM];
    for i in 0..DIM {
        a[i] = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
    }
    a
}

/// Minimizes `f` over the box `[lo, hi]`.
///
/// `f` returns `None` where the objective is undefined; such points are
/// treated as infinitely bad by the line search. Returns `None` only if the
/// starting point itself cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: Vector, lo: Vector, hi: Vector, opts: &BfgsOptions) -> Option<Minimum>
where
    F: FnMut(&Vector) -> Option<(f64, Vector)>,
{
    let mut x = x0;
    project(&mut x, &lo, &hi);
    let (mut fx, mut g) = f(&x)?;
    let mut h = identity();
    let mut iters = 0;

    while iters < opts.max_iters {
        iters += 1;
        let active = active_set(&x, &g, &lo, &hi);
        let mut g_free = g;
        for i in 0..DIM {
            if active[i] {
                g_free[i] = 0.0;
            }
        }
        if g_free.iter().map(|v| v.abs()).fold(0.0, f64::max) < opts.grad_tol {
            break;
        }

        let mut p = mat_vec(&h, &g_free).map(|v| -v);
        for i in 0..DIM {
            if active[i] {
                p[i] = 0.0;
            }
        }
        if dot(&p, &g_free) >= 0.0 {
            h = identity();
            p = g_free.map(|v| -v);
        }
        let pmax = p.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if pmax > opts.max_step {
            let s = opts.max_step / pmax;
            p = p.map(|v| v * s);
        }

        // Armijo backtracking along the projected path.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn = [0.0; DIM];
            for i in 0..DIM {
                xn[i] = x[i] + t * p[i];
            }
            project(&mut xn, &lo, &hi);
            let step: Vector = std::array::from_fn(|i| xn[i] - x[i]);
            if step.iter().all(|v| *v == 0.0) {
                break;
            }
            if let Some((fxn, gn)) = f(&xn) {
                if fxn.is_finite() && fxn <= fx + 1e-4 * dot(&g, &step) {
                    accepted = Some((xn, fxn, gn, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fxn, gn, s)) = accepted else {
            break;
        };

        let yv: Vector = std::array::from_fn(|i| gn[i] - g[i]);
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &yv, sy);
        }
        let df = fx - fxn;
        x = xn;
        fx = fxn;
        g = gn;
        if df.abs() <= opts.f_rel_tol * (1.0 + fx.abs()) {
            break;
        }
    }
    Some(Minimum { x, f: fx })
}

type Matrix = [[f64; DIM]; DIM];

fn identity() -> Matrix {
    let mut m = [[0.0; DIM]; DIM];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mat_vec(m: &Matrix, v: &Vector) -> Vector {
    std::array::from_fn(|i| dot(&m[i], v))
}

/// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
fn bfgs_update(h: &mut Matrix, s: &Vector, y: &Vector, sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..DIM {
        for j in 0..DIM {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
