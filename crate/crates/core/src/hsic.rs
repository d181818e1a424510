//! Biased HSIC with Gaussian kernels.
//!
//! `HSIC(K, L) = n⁻² tr(K H L H)` with `H = I − n⁻¹ 11ᵀ`, evaluated without
//! forming `H` as
//!
//! ```text
//! mean(K∘L) + mean(K)·mean(L) − 2 n⁻³ Σ_i (K1)_i (L1)_i
//! ```

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::accum::{map_blocks, NeumaierSum};
use crate::error::HsicError;

/// Rows used by the median heuristic at most.
pub const MEDIAN_SUBSAMPLE: usize = 500;

/// Kernel scale: `k(a, b) = exp(−‖a − b‖² / bandwidth)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median squared pairwise distance of the input.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsicConfig {
    pub bandwidth_x: Bandwidth,
    pub bandwidth_e: Bandwidth,
}

impl HsicConfig {
    pub fn median() -> Self {
        Self {
            bandwidth_x: Bandwidth::Median,
            bandwidth_e: Bandwidth::Median,
        }
    }

    /// Unit bandwidth on both sides: `exp(−‖a − b‖²)`.
    pub fn unit() -> Self {
        Self {
            bandwidth_x: Bandwidth::Fixed(1.0),
            bandwidth_e: Bandwidth::Fixed(1.0),
        }
    }
}

impl Default for HsicConfig {
    fn default() -> Self {
        Self::median()
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn check_bandwidth(bw: f64) -> Result<f64, HsicError> {
    if bw > 0.0 && bw.is_finite() {
        Ok(bw)
    } else {
        Err(HsicError::InvalidBandwidth(bw))
    }
}

/// Gaussian gram matrix of the rows of `rows`.
pub fn gram_gaussian(rows: ArrayView2<'_, f64>, bandwidth: f64) -> Result<Array2<f64>, HsicError> {
    let bw = check_bandwidth(bandwidth)?;
    let n = rows.nrows();
    let blocks = map_blocks(n, |start, end| {
        let mut out = Vec::with_capacity((end - start) * n);
        for i in start..end {
            for j in 0..n {
                out.push(if i == j {
                    1.0
                } else {
                    (-sq_dist(rows.row(i), rows.row(j)) / bw).exp()
                });
            }
        }
        out
    });
    let flat: Vec<f64> = blocks.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((n, n), flat).expect("n×n gram"))
}

/// Median of the squared pairwise distances over an evenly strided subsample
/// of at most [`MEDIAN_SUBSAMPLE`] rows. Falls back to 1 when that median is
/// zero.
pub fn median_heuristic(rows: ArrayView2<'_, f64>) -> f64 {
    let n = rows.nrows();
    let k = n.min(MEDIAN_SUBSAMPLE);
    let idx: Vec<usize> = (0..k).map(|t| t * n / k).collect();
    let mut d = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            d.push(sq_dist(rows.row(idx[a]), rows.row(idx[b])));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

fn resolve(bw: Bandwidth, rows: ArrayView2<'_, f64>) -> Result<f64, HsicError> {
    match bw {
        Bandwidth::Median => Ok(median_heuristic(rows)),
        Bandwidth::Fixed(v) => check_bandwidth(v),
    }
}

/// `n⁻² tr(K H L H)` for two symmetric `n×n` gram matrices.
pub fn hsic_biased(k: ArrayView2<'_, f64>, l: ArrayView2<'_, f64>) -> Result<f64, HsicError> {
    let (n, c) = k.dim();
    if n != c {
        return Err(HsicError::NotSquare(n, c));
    }
    let (nl, cl) = l.dim();
    if nl != cl {
        return Err(HsicError::NotSquare(nl, cl));
    }
    if n != nl {
        return Err(HsicError::DimensionMismatch(n, nl));
    }
    if n == 0 {
        return Err(HsicError::TooFewSamples);
    }
    // per block: Σ K∘L, Σ K, Σ L, and Σ_i (K1)_i (L1)_i
    let parts = map_blocks(n, |start, end| {
        let (mut kl, mut ks, mut ls, mut cross) = (
            NeumaierSum::default(),
            NeumaierSum::default(),
            NeumaierSum::default(),
            NeumaierSum::default(),
        );
        for i in start..end {
            let (kr, lr) = (k.row(i), l.row(i));
            let mut rk = NeumaierSum::default();
            let mut rl = NeumaierSum::default();
            for (a, b) in kr.iter().zip(lr.iter()) {
                kl.add(a * b);
                rk.add(*a);
                rl.add(*b);
            }
            ks.add(rk.value());
            ls.add(rl.value());
            cross.add(rk.value() * rl.value());
        }
        [kl.value(), ks.value(), ls.value(), cross.value()]
    });
    let mut tot = [NeumaierSum::default(); 4];
    for part in parts {
        for (t, v) in tot.iter_mut().zip(part) {
            t.add(v);
        }
    }
    let nf = n as f64;
    let n2 = nf * nf;
    let [kl, ks, ls, cross] = tot.map(|t| t.value());
    Ok(kl / n2 + (ks / n2) * (ls / n2) - 2.0 * cross / (n2 * nf))
}

/// HSIC between the rows of `x_rows` and the scalar sample `e`.
pub fn hsic_statistic(
    x_rows: ArrayView2<'_, f64>,
    e: &[f64],
    cfg: &HsicConfig,
) -> Result<f64, HsicError> {
    let n = x_rows.nrows();
    if n < 2 {
        return Err(HsicError::TooFewSamples);
    }
    if e.len() != n {
        return Err(HsicError::DimensionMismatch(n, e.len()));
    }
    let e_rows = ArrayView2::from_shape((n, 1), e).expect("column view");
    let bx = resolve(cfg.bandwidth_x, x_rows)?;
    let be = resolve(cfg.bandwidth_e, e_rows)?;
    let k = gram_gaussian(x_rows, bx)?;
    let l = gram_gaussian(e_rows, be)?;
    hsic_biased(k.view(), l.view())
}
