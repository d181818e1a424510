//! Monotone ascent routines used by the rank estimators.
//!
//! Both routines only ever accept steps that pass an Armijo test, so the
//! returned objective is never below the starting value.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    /// Gradient-norm threshold for convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterates beyond this Euclidean norm stop the run unconverged.
    pub max_norm: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            max_norm: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    MaxIter,
    NormLimit,
    /// No step along the search direction increased the objective.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

impl AscentOutcome {
    pub fn converged(&self) -> bool {
        self.reason == StopReason::Gradient
    }
}

/// Value, gradient and (row-major, optional) Hessian at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<f64>>,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Armijo test. Near a stationary point the Armijo margin drops below
/// rounding noise of the objective, so a step that does not lower the value
/// beyond that noise is also accepted there.
fn acceptable(f: f64, fn_: f64, t: f64, slope: f64) -> bool {
    let noise = 1e-14 * f.abs().max(1e-300);
    fn_.is_finite() && (fn_ >= f + ARMIJO * t * slope || (t * slope <= noise && fn_ >= f - noise))
}

/// Backtracking along `dir` starting from step length `t`.
fn backtrack<V>(
    x: &[f64],
    f: f64,
    slope: f64,
    dir: &[f64],
    mut t: f64,
    value: &mut V,
) -> Option<(Vec<f64>, f64)>
where
    V: FnMut(&[f64]) -> f64,
{
    for _ in 0..MAX_HALVINGS {
        let xn = axpy(x, t, dir);
        let fn_ = value(&xn);
        if acceptable(f, fn_, t, slope) {
            return Some((xn, fn_));
        }
        t *= 0.5;
    }
    None
}

/// Damped Newton ascent for a concave objective. Falls back to the gradient
/// direction whenever the Hessian is not negative definite.
///
/// `eval(x, true)` must return the Hessian; `value(x)` only the objective.
/// `diverging(x)` lets the caller flag a recession direction (no finite
/// maximizer); the iterate is then pushed along its own ray until it
/// crosses `max_norm`.
pub fn newton_ascent<E, V, D>(
    x0: Vec<f64>,
    opts: &AscentOptions,
    mut eval: E,
    mut value: V,
    mut diverging: D,
) -> AscentOutcome
where
    E: FnMut(&[f64]) -> Evaluation,
    V: FnMut(&[f64]) -> f64,
    D: FnMut(&[f64]) -> bool,
{
    let p = x0.len();
    let mut x = x0;
    let mut e = eval(&x);
    let mut iterations = 0;
    let reason = loop {
        let gn = norm(&e.gradient);
        if gn <= opts.tol {
            break StopReason::Gradient;
        }
        if norm(&x) > opts.max_norm {
            break StopReason::NormLimit;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIter;
        }
        iterations += 1;
        if norm(&x) > 0.0 && diverging(&x) {
            let mut f = e.value;
            while norm(&x) <= opts.max_norm {
                let xn: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
                let fn_ = value(&xn);
                if fn_ < f {
                    break;
                }
                x = xn;
                f = fn_;
            }
            e = eval(&x);
            break StopReason::NormLimit;
        }
        let mut dir = None;
        if let Some(h) = &e.hessian {
            let neg = DMatrix::from_row_slice(p, p, h).map(|v| -v);
            if let Some(ch) = neg.cholesky() {
                let d = ch.solve(&DVector::from_column_slice(&e.gradient));
                let d: Vec<f64> = d.iter().copied().collect();
                if d.iter().all(|v| v.is_finite()) && dot(&d, &e.gradient) > 0.0 {
                    dir = Some(d);
                }
            }
        }
        let dir = dir.unwrap_or_else(|| e.gradient.clone());
        let slope = dot(&dir, &e.gradient);
        // the full step usually passes, so try it with a complete evaluation
        let full = axpy(&x, 1.0, &dir);
        let trial = eval(&full);
        if acceptable(e.value, trial.value, 1.0, slope) {
            x = full;
            e = trial;
            continue;
        }
        match backtrack(&x, e.value, slope, &dir, 0.5, &mut value) {
            Some((xn, _)) => {
                x = xn;
                e = eval(&x);
            }
            None => break StopReason::Stalled,
        }
    };
    AscentOutcome {
        gradient_norm: norm(&e.gradient),
        value: e.value,
        x,
        iterations,
        reason,
    }
}

/// BFGS ascent with Armijo backtracking; used for non-concave objectives.
pub fn bfgs_ascent<E, V>(x0: Vec<f64>, opts: &AscentOptions, mut eval: E, mut value: V) -> AscentOutcome
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
    V: FnMut(&[f64]) -> f64,
{
    let p = x0.len();
    let mut x = x0;
    let (mut f, mut g) = eval(&x);
    // Inverse of the negated Hessian approximation.
    let mut hinv = DMatrix::<f64>::identity(p, p);
    let mut fresh = true;
    let mut iterations = 0;
    let reason = loop {
        if norm(&g) <= opts.tol {
            break StopReason::Gradient;
        }
        if norm(&x) > opts.max_norm {
            break StopReason::NormLimit;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIter;
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (&hinv * &gv).iter().copied().collect();
        if dot(&dir, &g) <= 0.0 {
            hinv = DMatrix::identity(p, p);
            dir = g.clone();
        }
        if fresh {
            // first step: scale the gradient step to unit length
            let s = norm(&dir).max(1e-300);
            dir.iter_mut().for_each(|v| *v /= s);
        }
        let slope = dot(&dir, &g);
        let full = axpy(&x, 1.0, &dir);
        let trial = eval(&full);
        let (xn, fn_, gn) = if acceptable(f, trial.0, 1.0, slope) {
            (full, trial.0, trial.1)
        } else {
            let Some((xn, _)) = backtrack(&x, f, slope, &dir, 0.5, &mut value) else {
                if fresh {
                    break StopReason::Stalled;
                }
                hinv = DMatrix::identity(p, p);
                fresh = true;
                continue;
            };
            let (fn_, gn) = eval(&xn);
            (xn, fn_, gn)
        };
        let s = DVector::from_iterator(p, xn.iter().zip(&x).map(|(a, b)| a - b));
        // ascent on f is descent on -f: y = -(g_new - g_old)
        let y = DVector::from_iterator(p, gn.iter().zip(&g).map(|(a, b)| b - a));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(p, p);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
            fresh = false;
        }
        x = xn;
        f = fn_;
        g = gn;
    };
    AscentOutcome {
        gradient_norm: norm(&g),
        value: f,
        x,
        iterations,
        reason,
    }
}
