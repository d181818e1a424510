//! Gaussian-noise rank regression.
//!
//! For the model `h(Y) = Xᵀβ + ε` with `ε ~ N(0, 1)` and unknown strictly
//! increasing `h`, each pair of observations satisfies
//! `P(Y_j > Y_i | X) = Φ((X_j − X_i)ᵀβ / √2)`. The estimator maximizes the
//! normalized log pairwise rank likelihood
//!
//! ```text
//! ℓ(β) = C(n,2)⁻¹ Σ_{i<j} log Φ(±(X_j − X_i)ᵀβ / √2)
//! ```
//!
//! (sign chosen by which of the two responses is larger), which is concave
//! and strictly concave when `n > p`. The transform is then recovered at
//! the sample points by inverting the mixture CDF
//! `F_β(z) = n⁻¹ Σ_i Φ(z − X_iᵀβ)` at the adjusted empirical CDF
//! `rank_i / (n + 1)`.
//!
//! All pair sums visit the sample in rank order, so only the ranks of `y`
//! ever enter the coefficient estimate.

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::accum::{map_blocks, NeumaierSum};
use crate::data::{compute_ranks, RankVector};
use crate::error::FitError;
use crate::normal;
use crate::optim::{newton_ascent, AscentOptions, Evaluation, StopReason};

/// Design rows reordered by increasing response rank.
#[derive(Debug, Clone)]
pub(crate) struct RankedDesign {
    rows: Vec<f64>,
    /// Same rows with column means removed; keeps the Laplacian form of the
    /// Hessian free of cancellation.
    centered: Vec<f64>,
    n: usize,
    p: usize,
}

impl RankedDesign {
    pub(crate) fn new(x: ArrayView2<'_, f64>, ranks: &RankVector) -> Result<Self, FitError> {
        let (n, p) = x.dim();
        if ranks.len() != n {
            return Err(FitError::Shape(format!(
                "{} ranks for {} design rows",
                ranks.len(),
                n
            )));
        }
        let mut rows = Vec::with_capacity(n * p);
        for &i in ranks.order() {
            rows.extend(x.row(i).iter());
        }
        let means: Vec<f64> = (0..p)
            .map(|k| (0..n).map(|a| rows[a * p + k]).collect::<NeumaierSum>().value() / n as f64)
            .collect();
        let centered = rows.iter().enumerate().map(|(j, v)| v - means[j % p]).collect();
        Ok(Self { rows, centered, n, p })
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub(crate) fn row(&self, a: usize) -> &[f64] {
        &self.rows[a * self.p..(a + 1) * self.p]
    }

    #[inline]
    fn centered_row(&self, a: usize) -> &[f64] {
        &self.centered[a * self.p..(a + 1) * self.p]
    }

    /// Linear predictor in rank order.
    pub(crate) fn scores(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|a| self.row(a).iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    /// True when the linear predictor strictly increases along the rank
    /// order, i.e. `beta` separates every pair.
    pub(crate) fn separates(&self, beta: &[f64]) -> bool {
        let s = self.scores(beta);
        s.windows(2).all(|w| w[1] > w[0])
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

struct Partial {
    value: NeumaierSum,
    grad: Vec<f64>,
    /// Row-local sums for the Hessian: `Σ_b w_ab` over every partner and
    /// `Σ_{b>a} w_ab x_b` for the rows of the block.
    degree: Vec<f64>,
    cross: Vec<f64>,
}

/// Value, gradient and Hessian of the normalized log pair likelihood.
///
/// The Hessian is `Σ_{a<b} w_ab (x_b − x_a)(x_b − x_a)ᵀ`, accumulated as
/// `Σ_a D_a x_a x_aᵀ − Σ_a (x_a V_aᵀ + V_a x_aᵀ)` with `D_a = Σ_b w_ab` and
/// `V_a = Σ_{b>a} w_ab x_b` on the centered design, so each pair costs `O(p)`.
fn prl_eval(design: &RankedDesign, beta: &[f64], order: Order) -> Evaluation {
    let (n, p) = (design.n, design.p);
    let s = design.scores(beta);
    let pairs = (n * (n - 1) / 2) as f64;
    let want_grad = order != Order::Value;
    let want_hess = order == Order::Hessian;
    let parts = map_blocks(n, |start, end| {
        let mut part = Partial {
            value: NeumaierSum::default(),
            grad: vec![0.0; if want_grad { p } else { 0 }],
            degree: vec![0.0; if want_hess { n } else { 0 }],
            cross: vec![0.0; if want_hess { (end - start) * p } else { 0 }],
        };
        for a in start..end {
            let xa = design.row(a);
            let mut deg_a = 0.0;
            let mut v_a = vec![0.0; if want_hess { p } else { 0 }];
            for b in a + 1..n {
                let d = (s[b] - s[a]) * FRAC_1_SQRT_2;
                let (lp, r) = normal::log_cdf_and_ratio(d);
                part.value.add(lp);
                if !want_grad {
                    continue;
                }
                let xb = design.row(b);
                for k in 0..p {
                    part.grad[k] += r * (xb[k] - xa[k]);
                }
                if want_hess {
                    let w = -r * (d + r);
                    deg_a += w;
                    part.degree[b] += w;
                    let cb = design.centered_row(b);
                    for k in 0..p {
                        v_a[k] += w * cb[k];
                    }
                }
            }
            if want_hess {
                part.degree[a] += deg_a;
                part.cross[(a - start) * p..(a - start + 1) * p].copy_from_slice(&v_a);
            }
        }
        part
    });
    let mut value = NeumaierSum::default();
    let mut gradient = vec![0.0; if want_grad { p } else { 0 }];
    let mut degree = vec![0.0; if want_hess { n } else { 0 }];
    let mut cross = Vec::with_capacity(if want_hess { n * p } else { 0 });
    for part in parts {
        value.add(part.value.value());
        gradient.iter_mut().zip(&part.grad).for_each(|(g, v)| *g += v);
        degree.iter_mut().zip(&part.degree).for_each(|(h, v)| *h += v);
        cross.extend_from_slice(&part.cross);
    }
    gradient
        .iter_mut()
        .for_each(|g| *g *= FRAC_1_SQRT_2 / pairs);
    let hessian = want_hess.then(|| {
        let mut hess = vec![0.0; p * p];
        for a in 0..n {
            let xa = design.centered_row(a);
            let va = &cross[a * p..(a + 1) * p];
            for k in 0..p {
                for l in 0..=k {
                    hess[k * p + l] += degree[a] * xa[k] * xa[l] - xa[k] * va[l] - va[k] * xa[l];
                }
            }
        }
        for k in 0..p {
            for l in 0..=k {
                let v = hess[k * p + l] * 0.5 / pairs;
                hess[k * p + l] = v;
                hess[l * p + k] = v;
            }
        }
        hess
    });
    Evaluation {
        value: value.value() / pairs,
        gradient,
        hessian,
    }
}

fn check_beta(x: ArrayView2<'_, f64>, beta: &[f64]) -> Result<(), FitError> {
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

/// Normalized log pairwise rank likelihood at `beta`. Always `<= 0`.
pub fn prl_objective(
    beta: &[f64],
    x: ArrayView2<'_, f64>,
    ranks: &RankVector,
) -> Result<f64, FitError> {
    check_beta(x, beta)?;
    let design = RankedDesign::new(x, ranks)?;
    Ok(prl_eval(&design, beta, Order::Value).value)
}

/// Analytic gradient of [`prl_objective`]: each pair contributes the inverse
/// Mills ratio at its standardized difference times `(X_hi − X_lo)/√2`.
pub fn prl_gradient(
    beta: &[f64],
    x: ArrayView2<'_, f64>,
    ranks: &RankVector,
) -> Result<Vec<f64>, FitError> {
    check_beta(x, beta)?;
    let design = RankedDesign::new(x, ranks)?;
    Ok(prl_eval(&design, beta, Order::Gradient).gradient)
}

/// Coefficient estimate from maximizing the pairwise rank likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrlFit {
    pub beta: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// Starting point for the Newton iterations: least squares of the normal
/// scores `Φ⁻¹(rank/(n+1))` on the design, rescaled by `1/√(1 − R²)`, which
/// undoes the unit-variance standardization when `h(Y)` is roughly Gaussian.
fn normal_score_start(design: &RankedDesign) -> Option<Vec<f64>> {
    let (n, p) = (design.n, design.p);
    let z: Vec<f64> = (0..n).map(|a| normal::quantile((a + 1) as f64 / (n + 1) as f64)).collect();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut rhs = nalgebra::DVector::<f64>::zeros(p);
    for (a, &za) in z.iter().enumerate() {
        let c = design.centered_row(a);
        for k in 0..p {
            rhs[k] += c[k] * za;
            for l in 0..=k {
                gram[(k, l)] += c[k] * c[l];
            }
        }
    }
    for k in 0..p {
        for l in 0..k {
            gram[(l, k)] = gram[(k, l)];
        }
    }
    let b = gram.cholesky()?.solve(&rhs);
    let zz: f64 = z.iter().map(|v| v * v).sum();
    let r2 = (b.dot(&rhs) / zz).clamp(0.0, 1.0 - 1e-6);
    let scale = 1.0 / (1.0 - r2).sqrt();
    let start: Vec<f64> = b.iter().map(|v| v * scale).collect();
    start.iter().all(|v| v.is_finite()).then_some(start)
}

/// Below this many rows the fit starts without a subsample pass.
const SUBSAMPLE_MIN: usize = 400;

/// Coefficients fitted on every fourth row; the pair sums there cost a
/// sixteenth as much and land close to the full-sample maximizer.
fn subsample_start(x: ArrayView2<'_, f64>, ranks: &RankVector, opts: &AscentOptions) -> Option<Vec<f64>> {
    let n = x.nrows();
    if n < SUBSAMPLE_MIN {
        return None;
    }
    let keep: Vec<usize> = (0..n).step_by(4).collect();
    let sub_x = x.select(Axis(0), &keep);
    let sub_y: Vec<f64> = keep.iter().map(|&i| ranks.ranks()[i] as f64).collect();
    let sub_ranks = compute_ranks(&sub_y).ok()?;
    let loose = AscentOptions {
        tol: opts.tol.max(1e-6),
        ..*opts
    };
    match fit_prl(sub_x.view(), &sub_ranks, &loose) {
        Ok(fit) => Some(fit.beta),
        Err(FitError::DidNotConverge { best_beta, .. }) => Some(best_beta),
        Err(_) => None,
    }
}

/// Maximizes the pairwise rank likelihood by damped Newton ascent, started
/// from the better of a subsample fit and a normal-scores least-squares fit
/// (or from `β = 0` when both are worse). Fails with [`FitError::IllPosed`] unless `n > p`, and with
/// [`FitError::DidNotConverge`] (carrying the best iterate) when the
/// gradient threshold is not met, including the separable case where the
/// supremum sits at infinity.
pub fn fit_prl(
    x: ArrayView2<'_, f64>,
    ranks: &RankVector,
    opts: &AscentOptions,
) -> Result<PrlFit, FitError> {
    let (n, p) = x.dim();
    if n <= p {
        return Err(FitError::IllPosed { n, p });
    }
    let design = RankedDesign::new(x, ranks)?;
    let start = [subsample_start(x, ranks, opts), normal_score_start(&design)]
        .into_iter()
        .flatten()
        .map(|b| (prl_eval(&design, &b, Order::Value).value, b))
        .filter(|(v, _)| *v > -std::f64::consts::LN_2)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map_or_else(|| vec![0.0; p], |(_, b)| b);
    let out = newton_ascent(
        start,
        opts,
        |b| prl_eval(&design, b, Order::Hessian),
        |b| prl_eval(&design, b, Order::Value).value,
        |b| design.separates(b),
    );
    if out.reason != StopReason::Gradient {
        return Err(FitError::DidNotConverge {
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
            best_beta: out.x,
            best_objective: out.value,
        });
    }
    Ok(PrlFit {
        beta: out.x,
        objective_value: out.value,
        iterations: out.iterations,
        converged: true,
        gradient_norm: out.gradient_norm,
    })
}

/// Pointwise estimate of the transform at the sample responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformEstimate {
    /// `(y_i, ĥ(y_i))` sorted by `y_i`.
    pub points: Vec<(f64, f64)>,
    /// `ĥ(y_i)` in sample order.
    pub values: Vec<f64>,
}

/// Sorted linear predictor with windowed evaluation of the normal mixture
/// `F(z) = n⁻¹ Σ Φ(z − s_i)` and its density.
struct Mixture {
    s: Vec<f64>,
}

/// Beyond this distance a normal CDF term is 0 or 1 to below 1e-18.
const WINDOW: f64 = 9.0;

impl Mixture {
    fn new(mut s: Vec<f64>) -> Self {
        s.sort_by(f64::total_cmp);
        Self { s }
    }

    fn cdf_and_density(&self, z: f64) -> (f64, f64) {
        let lo = self.s.partition_point(|&v| v < z - WINDOW);
        let hi = self.s.partition_point(|&v| v <= z + WINDOW);
        let mut c = lo as f64;
        let mut d = 0.0;
        for &v in &self.s[lo..hi] {
            c += normal::cdf(z - v);
            d += normal::pdf(z - v);
        }
        let n = self.s.len() as f64;
        (c / n, d / n)
    }

    /// Solves `F(z) = u` to absolute tolerance `1e-10` in `z` by Newton
    /// steps that fall back to bisection. Since `Φ(z − s_max) ≤ F(z) ≤
    /// Φ(z − s_min)`, the root lies in `[s_min + q − 1, s_max + q + 1]` with
    /// `q = Φ⁻¹(u)`. `prev` is an already solved `(z, F(z), F'(z))` with
    /// `F(z) < u`; it tightens the bracket and seeds the first step.
    fn invert(&self, u: f64, prev: Option<(f64, f64, f64)>) -> Result<(f64, f64, f64), FitError> {
        let q = normal::quantile(u);
        let (smin, smax) = (self.s[0], self.s[self.s.len() - 1]);
        let mut lo = smin + q - 1.0;
        let mut hi = smax + q + 1.0;
        let mut z = 0.5 * (lo + hi);
        if let Some((zp, cp, dp)) = prev {
            if cp < u && zp > lo {
                lo = zp;
            }
            let guess = zp + (u - cp) / dp;
            z = if dp > 0.0 && guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
        }
        if !(lo < hi && z.is_finite()) {
            return Err(FitError::BracketFailure(u));
        }
        for _ in 0..200 {
            let (c, d) = self.cdf_and_density(z);
            let r = c - u;
            if r < 0.0 {
                lo = z;
            } else {
                hi = z;
            }
            let newton = if d > 0.0 { z - r / d } else { f64::NAN };
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - z).abs() < 1e-10 || hi - lo < 1e-10 {
                return Ok((z, c, d));
            }
            z = next;
        }
        let (c, d) = self.cdf_and_density(z);
        Ok((z, c, d))
    }
}

/// `ĥ(y_i) = F_β⁻¹(rank_i / (n + 1))`, nondecreasing in `y`.
pub fn estimate_h_gauss(
    y: &[f64],
    ranks: &RankVector,
    x: ArrayView2<'_, f64>,
    beta: &[f64],
) -> Result<TransformEstimate, FitError> {
    check_beta(x, beta)?;
    let n = x.nrows();
    if y.len() != n || ranks.len() != n {
        return Err(FitError::Shape("y, ranks and x must have equal length".into()));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(FitError::Shape("beta must be finite".into()));
    }
    let s: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    let mix = Mixture::new(s);
    let mut values = vec![0.0; n];
    let mut prev: Option<(f64, f64, f64)> = None;
    for (k, &i) in ranks.order().iter().enumerate() {
        let u = (k + 1) as f64 / (n + 1) as f64;
        let (mut z, c, d) = mix.invert(u, prev)?;
        if let Some((zp, _, _)) = prev {
            z = z.max(zp);
        }
        values[i] = z;
        prev = Some((z, c, d));
    }
    let points = ranks.order().iter().map(|&i| (y[i], values[i])).collect();
    Ok(TransformEstimate { points, values })
}

/// `ε̂_i = ĥ(Y_i) − X_iᵀβ̂`.
pub fn residuals_gauss(
    y: &[f64],
    ranks: &RankVector,
    x: ArrayView2<'_, f64>,
    fit: &PrlFit,
) -> Result<Vec<f64>, FitError> {
    let h = estimate_h_gauss(y, ranks, x, &fit.beta)?;
    Ok(residuals_from(&h.values, x, &fit.beta))
}

pub(crate) fn residuals_from(h: &[f64], x: ArrayView2<'_, f64>, beta: &[f64]) -> Vec<f64> {
    x.rows()
        .into_iter()
        .zip(h)
        .map(|(r, &hv)| hv - r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Serializable summary of one fitted regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub h_points: Vec<(f64, f64)>,
    pub residuals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
}

/// Full RankG pipeline on a design matrix and raw responses.
pub fn fit_rank_gauss(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    ranks: &RankVector,
    opts: &AscentOptions,
) -> Result<FitResult, FitError> {
    let fit = fit_prl(x, ranks, opts)?;
    let h = estimate_h_gauss(y, ranks, x, &fit.beta)?;
    let residuals = residuals_from(&h.values, x, &fit.beta);
    Ok(FitResult {
        beta: fit.beta,
        objective: fit.objective_value,
        converged: fit.converged,
        h_points: h.points,
        residuals,
        pivot_index: None,
        lambda: None,
        y0: None,
    })
}

/// Row-wise `Xβ`.
pub fn linear_predictor(x: ArrayView2<'_, f64>, beta: &[f64]) -> Vec<f64> {
    let b = ndarray::ArrayView1::from(beta);
    x.dot(&b).to_vec()
}
