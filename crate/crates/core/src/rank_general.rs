//! Distribution-free rank regression.
//!
//! No noise law is assumed. The coefficient direction comes from the
//! smoothed rank concordance
//!
//! ```text
//! S(β) = C(n,2)⁻¹ Σ_{pairs} Φ(√n (X_hi − X_lo)ᵀβ)
//! ```
//!
//! whose scale is fixed by pinning one coordinate (the pivot) to `±1`. The
//! transform is then estimated pointwise as the penalized maximizer
//!
//! ```text
//! ĥ(y) = argmax_z Q(z, y, β̂) − λ z²
//! Q(z, y, β) = (n(n−1))⁻¹ Σ_{i≠j} (1{Y_j ≥ y} − 1{Y_i ≥ y₀}) Φ(√n ((X_j − X_i)ᵀβ − z))
//! ```
//!
//! Differences of `Q` in `z` never exceed 1, so no maximizer lies outside
//! `|z| ≤ λ^{-1/2}`, and the search over that interval is exhaustive.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::{map_blocks, NeumaierSum};
use crate::data::RankVector;
use crate::error::FitError;
use crate::normal;
use crate::optim::{bfgs_ascent, AscentOptions, StopReason};
use crate::rank_gauss::{fit_prl, linear_predictor, residuals_from, FitResult, RankedDesign};

/// Penalty weight used when none is given.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Standardized arguments beyond this are treated as exactly 0 or 1 under Φ.
const SATURATE: f64 = 9.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedFit {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub objective_value: f64,
    pub pivot_index: usize,
    /// Value held by `beta[pivot_index]`, either `1.0` or `-1.0`.
    pub pivot_sign: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedOptions {
    pub ascent: AscentOptions,
    pub pivot_sign: f64,
}

impl Default for SmoothedOptions {
    fn default() -> Self {
        Self {
            ascent: AscentOptions::default(),
            pivot_sign: 1.0,
        }
    }
}

fn smoothed_eval(
    design: &RankedDesign,
    offset: Option<&[f64]>,
    coef: &[f64],
    with_gradient: bool,
) -> (f64, Vec<f64>) {
    let (n, p) = (design.n(), design.p());
    let root_n = (n as f64).sqrt();
    let mut s = design.scores(coef);
    if let Some(off) = offset {
        s.iter_mut().zip(off).for_each(|(v, o)| *v += o);
    }
    let parts = map_blocks(n, |start, end| {
        let mut soft = NeumaierSum::default();
        let mut ones = 0u64;
        let mut grad = vec![0.0; if with_gradient { p } else { 0 }];
        for a in start..end {
            for b in a + 1..n {
                let t = root_n * (s[b] - s[a]);
                if t > SATURATE {
                    ones += 1;
                } else if t >= -SATURATE {
                    soft.add(normal::cdf(t));
                    if with_gradient {
                        let w = normal::pdf(t);
                        let (xa, xb) = (design.row(a), design.row(b));
                        for k in 0..p {
                            grad[k] += w * (xb[k] - xa[k]);
                        }
                    }
                }
            }
        }
        (soft.value(), ones, grad)
    });
    let pairs = (n * (n - 1) / 2) as f64;
    let mut value = NeumaierSum::default();
    let mut ones = 0u64;
    let mut grad = vec![0.0; if with_gradient { p } else { 0 }];
    for (v, o, g) in parts {
        value.add(v);
        ones += o;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    value.add(ones as f64);
    grad.iter_mut().for_each(|g| *g *= root_n / pairs);
    (value.value() / pairs, grad)
}

fn check_shapes(x: ArrayView2<'_, f64>, beta: &[f64]) -> Result<(), FitError> {
    if beta.len() != x.ncols() {
        return Err(FitError::Shape(format!(
            "beta has {} entries, design has {} columns",
            beta.len(),
            x.ncols()
        )));
    }
    if x.nrows() < 2 {
        return Err(FitError::Shape("need at least 2 observations".into()));
    }
    Ok(())
}

/// Smoothed rank concordance `S(β)`, in `(0, 1)` with `S(0) = 1/2`.
pub fn smoothed_objective(
    beta: &[f64],
    x: ArrayView2<'_, f64>,
    ranks: &RankVector,
) -> Result<f64, FitError> {
    check_shapes(x, beta)?;
    let design = RankedDesign::new(x, ranks)?;
    Ok(smoothed_eval(&design, None, beta, false).0)
}

/// Gradient of [`smoothed_objective`] with respect to the full `β`.
pub fn smoothed_gradient(
    beta: &[f64],
    x: ArrayView2<'_, f64>,
    ranks: &RankVector,
) -> Result<Vec<f64>, FitError> {
    check_shapes(x, beta)?;
    let design = RankedDesign::new(x, ranks)?;
    Ok(smoothed_eval(&design, None, beta, true).1)
}

/// Pivot with the largest absolute pilot coefficient, and that coefficient's
/// sign. Ties go to the lowest index.
pub fn choose_pivot(pilot: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (k, v) in pilot.iter().enumerate() {
        if v.abs() > pilot[best].abs() {
            best = k;
        }
    }
    let sign = if pilot.get(best).copied().unwrap_or(1.0) < 0.0 {
        -1.0
    } else {
        1.0
    };
    (best, sign)
}

fn drop_column(x: ArrayView2<'_, f64>, pivot: usize) -> ndarray::Array2<f64> {
    let keep: Vec<usize> = (0..x.ncols()).filter(|&k| k != pivot).collect();
    x.select(ndarray::Axis(1), &keep)
}

fn insert_pivot(theta: &[f64], pivot: usize, sign: f64) -> Vec<f64> {
    let mut beta = theta.to_vec();
    beta.insert(pivot, sign);
    beta
}

/// Maximizes `S(θ, ±1)` over the non-pivot coordinates from several starts
/// and keeps the best local maximizer.
///
/// Starts are the RankG pilot rescaled so its pivot entry equals the pivot
/// sign, the zero vector, and `±e_k` for each free coordinate.
pub fn fit_smoothed(
    x: ArrayView2<'_, f64>,
    ranks: &RankVector,
    pivot: usize,
    opts: &SmoothedOptions,
) -> Result<SmoothedFit, FitError> {
    let pilot = match fit_prl(x, ranks, &opts.ascent) {
        Ok(fit) => Some(fit.beta),
        Err(FitError::DidNotConverge { best_beta, .. }) => Some(best_beta),
        Err(_) => None,
    };
    fit_smoothed_with_pilot(x, ranks, pivot, pilot.as_deref(), opts)
}

pub(crate) fn fit_smoothed_with_pilot(
    x: ArrayView2<'_, f64>,
    ranks: &RankVector,
    pivot: usize,
    pilot: Option<&[f64]>,
    opts: &SmoothedOptions,
) -> Result<SmoothedFit, FitError> {
    let (n, p) = x.dim();
    if pivot >= p {
        return Err(FitError::InvalidPivot { pivot, p });
    }
    if n < 2 {
        return Err(FitError::Shape("need at least 2 observations".into()));
    }
    let col = x.column(pivot);
    if col.iter().all(|&v| v == col[0]) {
        return Err(FitError::DegeneratePivot(pivot));
    }
    let sign = if opts.pivot_sign < 0.0 { -1.0 } else { 1.0 };
    let reduced = drop_column(x, pivot);
    let design = RankedDesign::new(reduced.view(), ranks)?;
    let offset: Vec<f64> = ranks.order().iter().map(|&i| sign * col[i]).collect();
    let q = p - 1;

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(2 * q + 2);
    if let Some(b) = pilot.filter(|b| b.len() == p && b[pivot] != 0.0 && b.iter().all(|v| v.is_finite())) {
        let scale = sign / b[pivot];
        starts.push(
            b.iter()
                .enumerate()
                .filter(|&(k, _)| k != pivot)
                .map(|(_, v)| v * scale)
                .collect(),
        );
    }
    starts.push(vec![0.0; q]);
    for k in 0..q {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; q];
            e[k] = s;
            starts.push(e);
        }
    }

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in starts {
        let out = bfgs_ascent(
            start,
            &opts.ascent,
            |t| smoothed_eval(&design, Some(&offset), t, true),
            |t| smoothed_eval(&design, Some(&offset), t, false).0,
        );
        let ok = matches!(out.reason, StopReason::Gradient | StopReason::Stalled);
        let better = match &best {
            None => true,
            Some((_, v, was_ok)) => (ok && !was_ok) || (ok == *was_ok && out.value > *v),
        };
        if better {
            best = Some((out.x, out.value, ok));
        }
    }
    let (theta, value, ok) = best.expect("at least one start");
    let beta = insert_pivot(&theta, pivot, sign);
    if !ok {
        return Err(FitError::DidNotConverge {
            iterations: opts.ascent.max_iter,
            gradient_norm: f64::NAN,
            best_beta: beta,
            best_objective: value,
        });
    }
    Ok(SmoothedFit {
        theta,
        beta,
        objective_value: value,
        pivot_index: pivot,
        pivot_sign: sign,
        converged: true,
    })
}

/// Penalized transform estimate at a set of response values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTransformEstimate {
    /// `(y, ĥ(y))` sorted by `y`, one entry per distinct target.
    pub points: Vec<(f64, f64)>,
    pub lambda: f64,
    pub y0: f64,
    /// `ĥ(y₀)`; not forced to zero by the penalized search.
    pub h_at_y0: f64,
}

impl QTransformEstimate {
    pub fn get(&self, y: f64) -> Option<f64> {
        self.points
            .binary_search_by(|(v, _)| v.total_cmp(&y))
            .ok()
            .map(|k| self.points[k].1)
    }

    /// Shifts every value so that `ĥ(y₀) = 0`.
    pub fn recentered(&self) -> Self {
        let shift = self.h_at_y0;
        Self {
            points: self.points.iter().map(|&(y, h)| (y, h - shift)).collect(),
            h_at_y0: 0.0,
            ..self.clone()
        }
    }

    /// Count of adjacent points where `ĥ` decreases.
    pub fn monotonicity_violations(&self) -> usize {
        self.points.windows(2).filter(|w| w[1].1 < w[0].1).count()
    }
}

/// Precomputed pieces for evaluating `Q(z, y)` at many `(z, y)`.
struct QEvaluator {
    root_n: f64,
    /// Linear predictor, ascending.
    sorted_s: Vec<f64>,
    /// Linear predictor in ascending-`Y` order.
    s_by_y: Vec<f64>,
    y_sorted: Vec<f64>,
    /// Linear predictor of observations with `Y ≥ y₀`.
    s_anchor: Vec<f64>,
    norm: f64,
}

impl QEvaluator {
    fn new(s: &[f64], yvec: &[f64], y0: f64) -> Self {
        let n = s.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| yvec[a].total_cmp(&yvec[b]));
        let mut sorted_s = s.to_vec();
        sorted_s.sort_by(f64::total_cmp);
        Self {
            root_n: (n as f64).sqrt(),
            s_by_y: idx.iter().map(|&i| s[i]).collect(),
            y_sorted: idx.iter().map(|&i| yvec[i]).collect(),
            s_anchor: (0..n).filter(|&i| yvec[i] >= y0).map(|i| s[i]).collect(),
            sorted_s,
            norm: (n * (n - 1)) as f64,
        }
    }

    fn n(&self) -> usize {
        self.sorted_s.len()
    }

    /// `G(t) = Σ_i Φ(√n (t − s_i))`.
    fn g(&self, t: f64) -> f64 {
        let w = SATURATE / self.root_n;
        let lo = self.sorted_s.partition_point(|&v| v < t - w);
        let hi = self.sorted_s.partition_point(|&v| v <= t + w);
        let mut acc = NeumaierSum::default();
        for &v in &self.sorted_s[lo..hi] {
            acc.add(normal::cdf(self.root_n * (t - v)));
        }
        acc.value() + lo as f64
    }

    /// `(G(t), G'(t), G''(t))`.
    fn g_derivs(&self, t: f64) -> [f64; 3] {
        let w = SATURATE / self.root_n;
        let lo = self.sorted_s.partition_point(|&v| v < t - w);
        let hi = self.sorted_s.partition_point(|&v| v <= t + w);
        let (mut c, mut d1, mut d2) = (NeumaierSum::default(), 0.0, 0.0);
        for &v in &self.sorted_s[lo..hi] {
            let u = self.root_n * (t - v);
            let phi = normal::pdf(u);
            c.add(normal::cdf(u));
            d1 += phi;
            d2 -= u * phi;
        }
        let n = self.root_n * self.root_n;
        [c.value() + lo as f64, self.root_n * d1, n * d2]
    }

    /// `Q(z, y)` with its first two `z`-derivatives.
    fn q_derivs(&self, z: f64, y: f64) -> [f64; 3] {
        let rn = self.root_n;
        let u = rn * z;
        let self_pair = [normal::cdf(-u), -rn * normal::pdf(u), rn * rn * u * normal::pdf(u)];
        let mut acc = [NeumaierSum::default(), NeumaierSum::default(), NeumaierSum::default()];
        for &sj in &self.s_by_y[self.first_at_or_above(y)..] {
            let g = self.g_derivs(sj - z);
            // A_j(z) = G(s_j − z) − Φ(−√n z)
            acc[0].add(g[0] - self_pair[0]);
            acc[1].add(-g[1] - self_pair[1]);
            acc[2].add(g[2] - self_pair[2]);
        }
        for &si in &self.s_anchor {
            let g = self.g_derivs(si + z);
            // B_i(z) = n − G(s_i + z) − Φ(−√n z)
            acc[0].add(-(self.n() as f64 - g[0] - self_pair[0]));
            acc[1].add(g[1] + self_pair[1]);
            acc[2].add(g[2] + self_pair[2]);
        }
        acc.map(|a| a.value() / self.norm)
    }

    /// `Σ_{i≠j} Φ(√n (s_j − s_i − z))` over `i`, for fixed `j`.
    fn a(&self, sj: f64, z: f64) -> f64 {
        self.g(sj - z) - normal::cdf(-self.root_n * z)
    }

    /// `Σ_{j≠i} Φ(√n (s_j − s_i − z))` over `j`, for fixed `i`.
    fn b(&self, si: f64, z: f64) -> f64 {
        self.n() as f64 - self.g(si + z) - normal::cdf(-self.root_n * z)
    }

    fn anchor_term(&self, z: f64) -> f64 {
        self.s_anchor.iter().map(|&si| self.b(si, z)).collect::<NeumaierSum>().value()
    }

    fn first_at_or_above(&self, y: f64) -> usize {
        self.y_sorted.partition_point(|&v| v < y)
    }

    fn q(&self, z: f64, y: f64) -> f64 {
        let from = self.first_at_or_above(y);
        let upper: f64 = self.s_by_y[from..]
            .iter()
            .map(|&sj| self.a(sj, z))
            .collect::<NeumaierSum>()
            .value();
        (upper - self.anchor_term(z)) / self.norm
    }

    /// `Q(z, y)` for every suffix start `k` of the `Y`-sorted sample; entry
    /// `k` covers the targets with `first_at_or_above(y) = k`.
    fn q_all_suffixes(&self, z: f64) -> Vec<f64> {
        let n = self.n();
        let anchor = self.anchor_term(z);
        let mut out = vec![0.0; n + 1];
        let mut acc = NeumaierSum::default();
        out[n] = -anchor / self.norm;
        for k in (0..n).rev() {
            acc.add(self.a(self.s_by_y[k], z));
            out[k] = (acc.value() - anchor) / self.norm;
        }
        out
    }
}

/// `Q(z, y, β)` as defined in the module docs.
pub fn q_objective(
    z: f64,
    y: f64,
    beta: &[f64],
    x: ArrayView2<'_, f64>,
    yvec: &[f64],
    y0: f64,
) -> Result<f64, FitError> {
    check_shapes(x, beta)?;
    if yvec.len() != x.nrows() {
        return Err(FitError::Shape("yvec and x must have equal length".into()));
    }
    let s = linear_predictor(x, beta);
    Ok(QEvaluator::new(&s, yvec, y0).q(z, y))
}

/// Brent's search for a maximum of `f` on `[a, b]` from the interior point
/// `x0` with known value `f0`: parabolic steps through the three best
/// points, golden-section steps when those misbehave.
fn brent_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, x0: f64, f0: f64, tol: f64) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let g = |z: f64| -f(z);
    let mut x = x0;
    let (mut w, mut v) = (x, x);
    let mut fx = -f0;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = 2.0 * f64::EPSILON * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut parabolic = false;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                parabolic = true;
            }
        }
        if !parabolic {
            e = if x < m { b - x } else { a - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, -fx)
}

/// Newton ascent on `Q(·, y) − λz²` from `z0`, confined to `[lo, hi]`.
/// Returns `None` as soon as the curvature is not negative, a step leaves
/// the bracket or lowers the objective, so the caller can fall back.
fn newton_refine(ev: &QEvaluator, y: f64, lambda: f64, z0: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let eval = |z: f64| {
        let [q, d1, d2] = ev.q_derivs(z, y);
        [q - lambda * z * z, d1 - 2.0 * lambda * z, d2 - 2.0 * lambda]
    };
    let mut z = z0;
    let mut cur = eval(z);
    for _ in 0..12 {
        let [f, d1, d2] = cur;
        if !(d2 < 0.0) {
            return None;
        }
        let step = -d1 / d2;
        let next = z + step;
        if !(next >= lo && next <= hi) {
            return None;
        }
        let cand = eval(next);
        if cand[0] < f - 1e-15 * f.abs().max(1.0) {
            return None;
        }
        z = next;
        cur = cand;
        if step.abs() < NEWTON_STEP_TOL {
            return Some((z, cur[0]));
        }
    }
    None
}

/// A Newton step this short ends the refinement.
const NEWTON_STEP_TOL: f64 = 1e-9;

/// Final bracket width of the refinement around each grid maximum.
const REFINE_TOL: f64 = 1e-7;

/// `ĥ(y) = argmax_z Q(z, y, β) − λz²` for every target (and for `y₀`).
///
/// The search scans a grid of spacing at most `0.5/√n` over the whole
/// feasible interval, then refines each target's best grid node inside the
/// two neighbouring cells by Newton steps, or by Brent's method when those
/// are not safe.
pub fn estimate_h_smoothed(
    y_targets: &[f64],
    beta: &[f64],
    x: ArrayView2<'_, f64>,
    yvec: &[f64],
    y0: f64,
    lambda: f64,
) -> Result<QTransformEstimate, FitError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FitError::InvalidLambda(lambda));
    }
    check_shapes(x, beta)?;
    if yvec.len() != x.nrows() {
        return Err(FitError::Shape("yvec and x must have equal length".into()));
    }
    if !y0.is_finite() || y_targets.iter().any(|v| !v.is_finite()) {
        return Err(FitError::Shape("targets and y0 must be finite".into()));
    }
    let s = linear_predictor(x, beta);
    let ev = QEvaluator::new(&s, yvec, y0);
    let n = ev.n();

    let mut targets: Vec<f64> = y_targets.to_vec();
    targets.push(y0);
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let spread = ev.sorted_s[n - 1] - ev.sorted_s[0];
    let half = (1.0 / lambda).sqrt().min(spread + SATURATE / ev.root_n);
    let step = (0.5 / ev.root_n).min(half / 32.0);
    let cells = (2.0 * half / step).ceil() as usize;
    let step = 2.0 * half / cells as f64;
    let grid: Vec<f64> = (0..=cells).map(|k| -half + k as f64 * step).collect();

    let slots: Vec<usize> = targets.iter().map(|&t| ev.first_at_or_above(t)).collect();
    let per_node: Vec<Vec<f64>> = grid.par_iter().map(|&z| ev.q_all_suffixes(z)).collect();
    let mut best = vec![(f64::NEG_INFINITY, 0usize); targets.len()];
    for (g, qs) in per_node.iter().enumerate() {
        let pen = lambda * grid[g] * grid[g];
        for (t, &slot) in slots.iter().enumerate() {
            let v = qs[slot] - pen;
            if v > best[t].0 {
                best[t] = (v, g);
            }
        }
    }

    let refined: Vec<f64> = targets
        .par_iter()
        .zip(best.par_iter())
        .map(|(&y, &(grid_value, g))| {
            let lo = grid[g.saturating_sub(1)];
            let hi = grid[(g + 1).min(cells)];
            let f = |z: f64| ev.q(z, y) - lambda * z * z;
            let (z, v) = newton_refine(&ev, y, lambda, grid[g], lo, hi)
                .unwrap_or_else(|| brent_max(f, lo, hi, grid[g], f(grid[g]), REFINE_TOL));
            if v >= grid_value {
                z
            } else {
                grid[g]
            }
        })
        .collect();

    let points: Vec<(f64, f64)> = targets.iter().copied().zip(refined).collect();
    let h_at_y0 = points[points.binary_search_by(|(v, _)| v.total_cmp(&y0)).expect("y0 inserted")].1;
    let sample: Vec<f64> = {
        let mut v = y_targets.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let points = points
        .into_iter()
        .filter(|(y, _)| sample.binary_search_by(|v| v.total_cmp(y)).is_ok())
        .collect();
    Ok(QTransformEstimate {
        points,
        lambda,
        y0,
        h_at_y0,
    })
}

/// `ε̂_i = ĥ(Y_i) − X_iᵀβ̂`, reading `ĥ(Y_i)` from `h_est`.
pub fn residuals_smoothed(
    yvec: &[f64],
    x: ArrayView2<'_, f64>,
    fit: &SmoothedFit,
    h_est: &QTransformEstimate,
) -> Result<Vec<f64>, FitError> {
    check_shapes(x, &fit.beta)?;
    let h = yvec
        .iter()
        .map(|&y| h_est.get(y).ok_or(FitError::MissingTransformPoint(y)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(residuals_from(&h, x, &fit.beta))
}

/// Settings for the full smoothed pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSConfig {
    pub ascent: AscentOptions,
    /// `None` picks the largest pilot coefficient and adopts its sign.
    pub pivot: Option<usize>,
    pub lambda: f64,
    pub y0: f64,
    pub recenter: bool,
}

impl Default for RankSConfig {
    fn default() -> Self {
        Self {
            ascent: AscentOptions::default(),
            pivot: None,
            lambda: DEFAULT_LAMBDA,
            y0: 0.0,
            recenter: false,
        }
    }
}

/// Fits `β`, then `ĥ` at every sample response, then residuals.
pub fn fit_rank_smoothed(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    ranks: &RankVector,
    cfg: &RankSConfig,
) -> Result<FitResult, FitError> {
    let p = x.ncols();
    let pilot = match fit_prl(x, ranks, &cfg.ascent) {
        Ok(fit) => Some(fit.beta),
        Err(FitError::DidNotConverge { best_beta, .. }) => Some(best_beta),
        Err(_) => None,
    };
    let (pivot, sign) = match (cfg.pivot, &pilot) {
        (Some(k), _) => (k, 1.0),
        (None, Some(b)) => choose_pivot(b),
        (None, None) => (p.saturating_sub(1), 1.0),
    };
    let opts = SmoothedOptions {
        ascent: cfg.ascent,
        pivot_sign: sign,
    };
    let fit = fit_smoothed_with_pilot(x, ranks, pivot, pilot.as_deref(), &opts)?;
    let mut h = estimate_h_smoothed(y, &fit.beta, x, y, cfg.y0, cfg.lambda)?;
    if cfg.recenter {
        h = h.recentered();
    }
    let residuals = residuals_smoothed(y, x, &fit, &h)?;
    Ok(FitResult {
        beta: fit.beta,
        objective: fit.objective_value,
        converged: fit.converged,
        h_points: h.points,
        residuals,
        pivot_index: Some(fit.pivot_index),
        lambda: Some(h.lambda),
        y0: Some(h.y0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_ranks;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(seed: u64, n: usize, beta: &[f64]) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta.len();
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| {
                let lin: f64 = (0..p).map(|k| x[[i, k]] * beta[k]).sum();
                (lin + rng.sample::<f64, _>(StandardNormal)).cbrt()
            })
            .collect();
        (x, y)
    }

    fn naive_s(beta: &[f64], x: &Array2<f64>, y: &[f64]) -> f64 {
        let n = y.len();
        let rn = (n as f64).sqrt();
        let mut acc = NeumaierSum::default();
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = (0..beta.len()).map(|k| (x[[j, k]] - x[[i, k]]) * beta[k]).sum();
                acc.add(if y[j] > y[i] {
                    normal::cdf(rn * d)
                } else {
                    normal::cdf(-rn * d)
                });
            }
        }
        acc.value() / (n * (n - 1) / 2) as f64
    }

    fn naive_q(z: f64, y: f64, beta: &[f64], x: &Array2<f64>, yv: &[f64], y0: f64) -> f64 {
        let n = yv.len();
        let rn = (n as f64).sqrt();
        let mut acc = NeumaierSum::default();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = f64::from(u8::from(yv[j] >= y)) - f64::from(u8::from(yv[i] >= y0));
                let d: f64 = (0..beta.len()).map(|k| (x[[j, k]] - x[[i, k]]) * beta[k]).sum();
                acc.add(w * normal::cdf(rn * (d - z)));
            }
        }
        acc.value() / (n * (n - 1)) as f64
    }

    #[test]
    fn s_at_zero_is_half_and_single_pair() {
        let (x, y) = instance(1, 20, &[1.0, 2.0]);
        let r = compute_ranks(&y).unwrap();
        assert_eq!(smoothed_objective(&[0.0, 0.0], x.view(), &r).unwrap(), 0.5);
        let x = array![[0.0], [1.0]];
        let r = compute_ranks(&[0.0, 1.0]).unwrap();
        let b = [1.6449 / 2f64.sqrt()];
        let v = smoothed_objective(&b, x.view(), &r).unwrap();
        assert!((v - normal::cdf(1.6449)).abs() < 1e-15);
        assert!((v - 0.95).abs() < 1e-4);
    }

    #[test]
    fn s_matches_double_loop() {
        let (x, y) = instance(2, 25, &[1.0, -2.0, 0.5]);
        let r = compute_ranks(&y).unwrap();
        for beta in [[0.1, 0.2, -0.3], [1.0, -2.0, 0.5], [10.0, 3.0, 1.0]] {
            let fast = smoothed_objective(&beta, x.view(), &r).unwrap();
            let slow = naive_s(&beta, &x, &y);
            assert!((fast - slow).abs() < 1e-14, "{fast} vs {slow}");
            assert!(fast > 0.0 && fast < 1.0);
        }
    }

    #[test]
    fn s_gradient_matches_finite_differences() {
        let (x, y) = instance(4, 40, &[1.0, 1.0]);
        let r = compute_ranks(&y).unwrap();
        let beta = [0.3, 0.2];
        let g = smoothed_gradient(&beta, x.view(), &r).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut bp = beta;
            let mut bm = beta;
            bp[k] += h;
            bm[k] -= h;
            let fd = (smoothed_objective(&bp, x.view(), &r).unwrap()
                - smoothed_objective(&bm, x.view(), &r).unwrap())
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * g[k].abs().max(1.0), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn scalar_theta_matches_grid() {
        let (x, y) = instance(8, 40, &[3.0, 1.0]);
        let r = compute_ranks(&y).unwrap();
        let fit = fit_smoothed(x.view(), &r, 1, &SmoothedOptions::default()).unwrap();
        assert_eq!(fit.beta[1], 1.0);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=10_000 {
            let t = -50.0 + 0.01 * k as f64;
            let v = smoothed_objective(&[t, 1.0], x.view(), &r).unwrap();
            if v > best.0 {
                best = (v, t);
            }
        }
        assert!(fit.objective_value >= best.0 - 1e-12, "{} < {}", fit.objective_value, best.0);
        assert!((fit.theta[0] - best.1).abs() <= 0.01 + 1e-9, "{} vs {}", fit.theta[0], best.1);
    }

    #[test]
    fn noise_pivot_inflates_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]] + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = compute_ranks(&y).unwrap();
        let fit = fit_smoothed(x.view(), &r, 1, &SmoothedOptions::default()).unwrap();
        assert!(fit.theta[0].abs() > 5.0, "{:?}", fit.theta);
    }

    #[test]
    fn degenerate_and_invalid_pivot() {
        let x = array![[1.0, 2.0], [2.0, 2.0], [3.0, 2.0]];
        let r = compute_ranks(&[1.0, 2.0, 3.0]).unwrap();
        let o = SmoothedOptions::default();
        assert!(matches!(fit_smoothed(x.view(), &r, 1, &o), Err(FitError::DegeneratePivot(1))));
        assert!(matches!(fit_smoothed(x.view(), &r, 2, &o), Err(FitError::InvalidPivot { .. })));
    }

    #[test]
    fn q_matches_double_loop_and_limits() {
        let (x, y) = instance(12, 15, &[2.0, -1.0]);
        let beta = [1.5, -0.7];
        for (z, t, y0) in [(0.0, 0.3, 0.0), (0.4, -0.5, 0.1), (-1.2, 1.0, -0.4), (0.05, y[3], y[7])] {
            let fast = q_objective(z, t, &beta, x.view(), &y, y0).unwrap();
            let slow = naive_q(z, t, &beta, &x, &y, y0);
            assert!((fast - slow).abs() < 1e-14, "{fast} vs {slow}");
            assert!(fast.abs() <= 1.0);
        }
        let top = q_objective(1e6, 0.2, &beta, x.view(), &y, 0.0).unwrap();
        assert_eq!(top, 0.0);
        let bottom = q_objective(-1e6, 0.2, &beta, x.view(), &y, 0.0).unwrap();
        let n = y.len();
        let mut w = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w += f64::from(u8::from(y[j] >= 0.2)) - f64::from(u8::from(y[i] >= 0.0));
                }
            }
        }
        assert!((bottom - w / (n * (n - 1)) as f64).abs() < 1e-14);
    }

    #[test]
    fn q_vanishes_with_equal_indicators() {
        let (x, y) = instance(13, 15, &[1.0, 1.0]);
        // targets below (above) every response make all indicators 1 (0)
        for t in [-100.0, 100.0] {
            for z in [-3.0, 0.0, 2.5] {
                let v = q_objective(z, t, &[1.0, 2.0], x.view(), &y, t).unwrap();
                assert!(v.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn target_matches_dense_grid() {
        let (x, y) = instance(17, 20, &[2.0, 1.0]);
        let beta = [2.0, 1.0];
        let target = y[4];
        let est = estimate_h_smoothed(&[target], &beta, x.view(), &y, 0.0, 1e-3).unwrap();
        let h = est.get(target).unwrap();
        let s = linear_predictor(x.view(), &beta);
        let spread = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - s.iter().cloned().fold(f64::INFINITY, f64::min);
        let half = (1e3f64).sqrt().min(spread + 9.0 / 20f64.sqrt());
        let ev = QEvaluator::new(&s, &y, 0.0);
        let m = 1_000_000;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..=m {
            let z = -half + 2.0 * half * k as f64 / m as f64;
            let v = ev.q(z, target) - 1e-3 * z * z;
            if v > best.0 {
                best = (v, z);
            }
        }
        assert!((h - best.1).abs() < 1e-4, "{h} vs {}", best.1);
    }

    #[test]
    fn brent_finds_interior_maximum() {
        let f = |z: f64| -(z - 0.3).powi(2) + 0.05 * (7.0 * z).sin();
        let (z, v) = brent_max(f, -1.0, 1.5, 0.0, f(0.0), 1e-9);
        let m = 2_000_000;
        let best = (0..=m)
            .map(|k| -1.0 + 2.5 * k as f64 / m as f64)
            .map(|t| (f(t), t))
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        assert!((z - best.1).abs() < 2e-6, "{z} vs {}", best.1);
        assert!(v >= best.0 - 1e-12);
    }

    #[test]
    fn q_derivatives_match_finite_differences() {
        let (x, y) = instance(29, 40, &[1.0, 2.0]);
        let s = linear_predictor(x.view(), &[1.0, 2.0]);
        let ev = QEvaluator::new(&s, &y, 0.1);
        let h = 1e-5;
        for (z, t) in [(0.0, 0.2), (0.7, -0.4), (-1.3, y[5])] {
            let [q, d1, d2] = ev.q_derivs(z, t);
            assert!((q - ev.q(z, t)).abs() < 1e-14);
            let fd1 = (ev.q(z + h, t) - ev.q(z - h, t)) / (2.0 * h);
            let fd2 = (ev.q(z + h, t) - 2.0 * q + ev.q(z - h, t)) / (h * h);
            assert!((fd1 - d1).abs() < 1e-7 * d1.abs().max(1.0), "{fd1} vs {d1}");
            assert!((fd2 - d2).abs() < 1e-3 * d2.abs().max(1.0), "{fd2} vs {d2}");
        }
    }

    #[test]
    fn newton_refinement_agrees_with_brent() {
        let (x, y) = instance(31, 80, &[2.0, 1.0]);
        let s = linear_predictor(x.view(), &[2.0, 1.0]);
        let ev = QEvaluator::new(&s, &y, 0.0);
        let step = 0.5 / ev.root_n;
        let mut compared = 0;
        for &t in y.iter().take(40) {
            // coarse scan, then both refiners inside the best cell pair
            let grid: Vec<f64> = (-400..=400).map(|k| k as f64 * step).collect();
            let f = |z: f64| ev.q(z, t) - 1e-3 * z * z;
            let g = (0..grid.len()).max_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b]))).unwrap();
            let (lo, hi) = (grid[g.saturating_sub(1)], grid[(g + 1).min(grid.len() - 1)]);
            let (zb, vb) = brent_max(f, lo, hi, grid[g], f(grid[g]), 1e-10);
            if let Some((zn, vn)) = newton_refine(&ev, t, 1e-3, grid[g], lo, hi) {
                compared += 1;
                assert!((zn - zb).abs() < 1e-6, "{zn} vs {zb}");
                assert!(vn >= vb - 1e-12);
            }
        }
        assert!(compared >= 30, "{compared}");
    }

    #[test]
    fn huge_penalty_pins_transform_to_zero() {
        let (x, y) = instance(19, 30, &[1.0, 1.0]);
        let est = estimate_h_smoothed(&y, &[1.0, 1.0], x.view(), &y, 0.0, 1e6).unwrap();
        assert_eq!(est.points.len(), 30);
        for &(_, h) in &est.points {
            assert!(h.abs() < 1e-3);
        }
        let fit = SmoothedFit {
            theta: vec![1.0],
            beta: vec![1.0, 1.0],
            objective_value: 0.5,
            pivot_index: 1,
            pivot_sign: 1.0,
            converged: true,
        };
        let e = residuals_smoothed(&y, x.view(), &fit, &est).unwrap();
        let lin = linear_predictor(x.view(), &fit.beta);
        for i in 0..30 {
            assert!((e[i] + lin[i]).abs() < 1e-3);
            assert_eq!(e[i], est.get(y[i]).unwrap() - lin[i]);
        }
        assert!(matches!(
            residuals_smoothed(&[12345.0], x.view(), &fit, &est),
            Err(FitError::Shape(_)) | Err(FitError::MissingTransformPoint(_))
        ));
        assert!(matches!(
            estimate_h_smoothed(&y, &[1.0, 1.0], x.view(), &y, 0.0, 0.0),
            Err(FitError::InvalidLambda(_))
        ));
    }

    #[test]
    fn transform_is_bounded_and_records_anchor() {
        let (x, y) = instance(23, 60, &[10.0, 5.0]);
        let r = compute_ranks(&y).unwrap();
        let res = fit_rank_smoothed(x.view(), &y, &r, &RankSConfig::default()).unwrap();
        let bound = (1.0 / DEFAULT_LAMBDA).sqrt() + 1.0;
        assert!(res.h_points.iter().all(|&(_, h)| h.is_finite() && h.abs() <= bound));
        assert_eq!(res.y0, Some(0.0));
        assert_eq!(res.residuals.len(), 60);
        let p = res.pivot_index.unwrap();
        assert_eq!(res.beta[p].abs(), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn s_invariances(seed in any::<u64>(), shift in -20.0f64..20.0) {
            let (x, y) = instance(seed, 12, &[1.0, -1.0]);
            let r = compute_ranks(&y).unwrap();
            let beta = [0.8, 0.4];
            let base = smoothed_objective(&beta, x.view(), &r).unwrap();
            prop_assert!(base > 0.0 && base < 1.0);
            let moved = smoothed_objective(&beta, (&x + shift).view(), &r).unwrap();
            prop_assert!((base - moved).abs() < 1e-12);
            let ty: Vec<f64> = y.iter().map(|v| 2.0 * v + 1.0).collect();
            let tr = compute_ranks(&ty).unwrap();
            prop_assert_eq!(smoothed_objective(&beta, x.view(), &tr).unwrap(), base);
        }

        #[test]
        fn q_is_bounded(seed in any::<u64>(), z in -5.0f64..5.0, t in -2.0f64..2.0) {
            let (x, y) = instance(seed, 10, &[1.0, 1.0]);
            let v = q_objective(z, t, &[1.0, 0.5], x.view(), &y, 0.0).unwrap();
            prop_assert!(v.abs() <= 1.0);
        }
    }
}
